//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::params::{ModelParams, ParamGrads};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter. Fails without touching anything
    /// if a parameter has no gradient.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads) -> Result<()> {
        if let Some(path) = params.paths().find(|p| !grads.contains_key(*p)) {
            return Err(Error::MissingGrad(path.to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let paths: Vec<String> = params.paths().map(str::to_string).collect();
        for path in paths {
            let g = grads[&path].data();
            let p = params.get_mut(&path)?;
            let mo = self.moments.entry(path).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * g[i];
                mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = mo.m[i] / c1;
                let v_hat = mo.v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
