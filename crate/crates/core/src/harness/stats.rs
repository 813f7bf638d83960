//! Percentile bootstrap intervals for a sample mean.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} [{:.4}, {:.4}]", self.mean, self.lo, self.hi)
    }
}

/// Mean of `values` with a `level` (e.g. 0.95) percentile interval from
/// `resamples` bootstrap draws.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, rng: &mut ChaCha8Rng) -> Interval {
    assert!(!values.is_empty(), "bootstrap of an empty sample");
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| {
        let i = (q * (means.len() - 1) as f64).round() as usize;
        means[i.min(means.len() - 1)]
    };
    Interval {
        mean,
        lo: at(tail),
        hi: at(1.0 - tail),
    }
}
