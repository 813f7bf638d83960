//! Seeded random streams. One master seed fans out to independent named
//! streams so that, e.g., changing the dropout draw never perturbs init.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Init,
    Dropout,
    Shuffle,
    Synth,
    Split,
    Bootstrap,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Shuffle => 3,
            Stream::Synth => 4,
            Stream::Split => 5,
            Stream::Bootstrap => 6,
        }
    }
}

pub fn stream(master_seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(which.id());
    rng
}

/// Serializable position of a stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub master_seed: u64,
    pub stream: Stream,
    /// Word position as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl StreamState {
    pub fn capture(master_seed: u64, which: Stream, rng: &ChaCha8Rng) -> Self {
        Self {
            master_seed,
            stream: which,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        let pos: u128 = self.word_pos.parse().ok()?;
        let mut rng = stream(self.master_seed, self.stream);
        rng.set_word_pos(pos);
        Some(rng)
    }
}
