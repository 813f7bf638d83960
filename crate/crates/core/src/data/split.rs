use rand::seq::SliceRandom;

use super::{DataError, EmbeddingBundle, Splits};
use crate::rng::{stream, Stream};

/// Stratified, seeded train/val/test split.
///
/// Each class is shuffled independently, then the classes are interleaved by
/// relative rank so that any contiguous run of the merged order has close to
/// the overall label balance. Split sizes are `round(N * ratio)` for train and
/// validation, with the remainder going to test.
pub fn split(samples: &[EmbeddingBundle], ratios: [f64; 3], seed: u64) -> Result<Splits, DataError> {
    if ratios.iter().any(|&r| r.is_nan() || r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Ratios(ratios));
    }
    let mut rng = stream(seed, Stream::Split);
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(samples.len());
    for class in 0..2 {
        let mut members: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label.index() == class)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        for (rank, idx) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, class, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let total = samples.len();
    let n_train = ((total as f64) * ratios[0]).round() as usize;
    let n_train = n_train.min(total);
    let n_val = (((total as f64) * ratios[1]).round() as usize).min(total - n_train);
    let ids = |range: std::ops::Range<usize>| -> Vec<String> {
        keyed[range].iter().map(|&(_, _, i)| samples[i].id.clone()).collect()
    };
    Ok(Splits {
        train: ids(0..n_train),
        val: ids(n_train..n_train + n_val),
        test: ids(n_train + n_val..total),
    })
}
