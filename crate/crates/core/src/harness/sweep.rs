//! One-parameter sweeps over `k`, `x`, `gamma` or `lambda`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::config::TrainConfig;
use super::metrics::Metrics;
use super::train::{evaluate, train_with};
use crate::data::Dataset;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Experts,
    Domains,
    Gamma,
    Lambda,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Experts => "k",
            SweepParam::Domains => "x",
            SweepParam::Gamma => "gamma",
            SweepParam::Lambda => "lambda",
        }
    }

    /// Returns `config` with the parameter set to `value`.
    pub fn apply(self, config: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = config.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::Experts => cfg.model.k = count()?,
            SweepParam::Domains => cfg.model.x = count()?,
            SweepParam::Gamma => cfg.training.gamma = value,
            SweepParam::Lambda => cfg.training.lambda = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "k" | "experts" => Ok(SweepParam::Experts),
            "x" | "domains" => Ok(SweepParam::Domains),
            "gamma" | "γ" => Ok(SweepParam::Gamma),
            "lambda" | "λ" => Ok(SweepParam::Lambda),
            _ => Err(Error::Config(format!("unknown sweep parameter {s:?}; expected k, x, gamma or lambda"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub test: Metrics,
}

/// Trains and tests once per value, every run from the configured seed.
/// All values are validated before any training starts.
pub fn sweep(config: &TrainConfig, dataset: &Dataset, param: SweepParam, values: &[f64], out_csv: Option<&Path>) -> Result<Vec<SweepRow>> {
    let configs = values
        .iter()
        .map(|&v| param.apply(config, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (cfg, &value) in configs.iter().zip(values) {
        let outcome = train_with(cfg, dataset, None)?;
        let test = evaluate(&outcome.model()?, &outcome.last.params, dataset, "test", cfg)?;
        rows.push(SweepRow {
            value,
            test: test.metrics,
        });
    }
    if let Some(path) = out_csv {
        let mut out = format!("{},{}\n", param.name(), Metrics::CSV_HEADER);
        for r in &rows {
            out.push_str(&format!("{},{}\n", r.value, r.test.csv_fields().join(",")));
        }
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
    }
    Ok(rows)
}
