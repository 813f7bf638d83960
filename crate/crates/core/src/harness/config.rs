//! Run configuration, read from TOML.
//!
//! ```toml
//! [data]
//! manifest = "data/weibo"          # or a [data.synthetic] table
//!
//! [model]
//! d_s = 32
//!
//! [training]
//! epochs = 40
//! seed = 7
//!
//! [ablation]
//! gate = true
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_dataset, DataDims, Dataset, SyntheticSpec};
use crate::model::{Ablation, ForwardOptions, ModelDims};
use crate::optim::AdamConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Dataset directory or manifest file.
    Manifest(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Model widths not fixed by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_s: usize,
    pub d_e: usize,
    pub d_e_out: usize,
    pub d_f: usize,
    pub heads: usize,
    pub expert_heads: usize,
    /// Experts per modality.
    pub k: usize,
    /// Emotion domains.
    pub x: usize,
    pub depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_s: 256,
            d_e: 64,
            d_e_out: 64,
            d_f: 128,
            heads: 8,
            expert_heads: 1,
            k: 3,
            x: 5,
            depth: 1,
        }
    }
}

impl ModelConfig {
    /// Scaled-down widths for synthetic data.
    pub fn synthetic() -> Self {
        Self {
            d_s: 32,
            d_e: 8,
            d_e_out: 8,
            d_f: 16,
            heads: 2,
            ..Self::default()
        }
    }

    pub fn dims(&self, data: DataDims) -> ModelDims {
        ModelDims {
            d: data.d,
            d_c: data.d_c,
            d_s: self.d_s,
            d_e: self.d_e,
            d_e_out: self.d_e_out,
            d_f: self.d_f,
            heads: self.heads,
            expert_heads: self.expert_heads,
            experts: self.k,
            domains: self.x,
            depth: self.depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 40,
            dropout: 0.5,
            gamma: 0.7,
            lambda: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub ablation: Ablation,
}

impl TrainConfig {
    pub fn new(data: DataSource) -> Self {
        Self {
            data,
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            training: TrainingConfig::default(),
            ablation: Ablation::none(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative manifest path is taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::format(path, e.message()))?;
        if let DataSource::Manifest(p) = &mut cfg.data {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                let joined = base.join(&*p);
                *p = fs::canonicalize(&joined).unwrap_or(joined);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            gamma: self.training.gamma,
            lambda: self.training.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        let bad = |msg: String| Err(Error::Config(msg));
        if t.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", t.dropout));
        }
        if !(0.0..=1.0).contains(&t.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", t.gamma));
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", t.lambda));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", o.beta1, o.beta2));
        }
        if o.eps.is_nan() || o.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", o.eps));
        }
        // widths against placeholder data dims; d and d_c are checked once data is known
        let probe = DataDims {
            d: self.model.heads,
            d_c: 1,
            m: 1,
            n: 1,
            z: 1,
            u: 1,
        };
        self.model.dims(probe).validate()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        Ok(match &self.data {
            DataSource::Manifest(p) => load_dataset(p)?,
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        })
    }
}
