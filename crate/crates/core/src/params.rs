//! Named parameter store and the per-forward binding context.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Every learnable tensor of a model, addressed by a stable dotted path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) {
        self.tensors.insert(path.into(), t);
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Gradient of the loss for each parameter path.
pub type ParamGrads = BTreeMap<String, Tensor>;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

struct Dropout<'a> {
    rate: f64,
    rng: &'a mut ChaCha8Rng,
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Ctx<'a> {
    pub graph: Graph,
    params: &'a ModelParams,
    bound: BTreeMap<String, Var>,
    dropout: Option<Dropout<'a>>,
}

impl<'a> Ctx<'a> {
    /// Inference mode: dropout is the identity.
    pub fn eval(params: &'a ModelParams) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: BTreeMap::new(),
            dropout: None,
        }
    }

    /// Training mode with inverted dropout drawn from `rng`.
    pub fn train(params: &'a ModelParams, rate: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: BTreeMap::new(),
            dropout: Some(Dropout { rate, rng }),
        }
    }

    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Leaf for parameter `path`, created on first use.
    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(path) {
            return Ok(v);
        }
        let t = self.params.get(path)?.clone();
        let v = self.graph.param(t)?;
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        Ok(self.graph.constant(t)?)
    }

    /// Inverted dropout; identity outside training or at rate 0.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some(d) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if d.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - d.rate;
        let n = self.graph.value(x).numel();
        let mask = (0..n)
            .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Ok(self.graph.mul_const(x, mask)?)
    }

    /// Runs backward from `loss` and returns the gradient of every bound parameter.
    pub fn into_gradients(self, loss: Var) -> Result<ParamGrads> {
        let bound = self.bound;
        let mut grads = self.graph.backward(loss)?;
        let mut out = ParamGrads::new();
        for (path, v) in bound {
            if let Some(g) = grads.take(v) {
                out.insert(path, g);
            }
        }
        Ok(out)
    }

    /// Paths bound so far, in sorted order.
    pub fn bound_paths(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }
}

/// Fills zero gradients for parameters a forward pass never touched, so the
/// optimizer sees a complete map.
pub fn complete_gradients(params: &ModelParams, grads: &mut ParamGrads) {
    for (path, t) in params.iter() {
        grads
            .entry(path.to_string())
            .or_insert_with(|| Tensor::zeros(t.shape()));
    }
}
