//! Balanced learning: `x` emotion-domain processors over the concatenated
//! news feature, mixed by a softmax gate on the emotion feature, then the
//! veracity classifier and the total loss.

use rand_chacha::ChaCha8Rng;

use crate::nn::{FeedForward, Linear};
use crate::params::{Ctx, ModelParams};
use crate::tensor::Var;
use crate::{Error, Result};

/// `M = [M_t; M_v; M_e; M_f]`.
pub fn concat_features(cx: &mut Ctx, m_t: Var, m_v: Var, m_e: Var, m_f: Var) -> Result<Var> {
    Ok(cx.graph.concat(&[m_t, m_v, m_e, m_f])?)
}

/// `F = Σ_j a_j m_j`, with `a: [B, x]` and each `m_j: [B, d_F]`.
pub fn aggregate(cx: &mut Ctx, weights: Var, outputs: &[Var]) -> Result<Var> {
    let x = cx.graph.shape(weights)[1];
    if x != outputs.len() {
        return Err(Error::Config(format!(
            "gate has {x} weights but there are {} processor outputs",
            outputs.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (j, &m) in outputs.iter().enumerate() {
        let a_j = cx.graph.slice_last(weights, j, 1)?;
        let term = cx.graph.mul_col(m, a_j)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => cx.graph.add(prev, term)?,
        });
    }
    Ok(acc.expect("at least one processor"))
}

/// `L = L_fnd + λ · L_emo`.
pub fn total_loss(cx: &mut Ctx, l_fnd: Var, l_emo: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let weighted = cx.graph.scale(l_emo, lambda)?;
    Ok(cx.graph.add(l_fnd, weighted)?)
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct BalancedDims {
    /// Width of the concatenated feature `M`.
    pub d_m: usize,
    pub d_e_out: usize,
    pub d_f: usize,
    /// Number of emotion domains `x`.
    pub domains: usize,
}

/// How the processor outputs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Learned softmax gate over all processors.
    Gated,
    /// Fixed `1 / x` weights over all processors.
    Uniform,
    /// Processor 0 alone.
    Single,
}

pub struct BalancedOutput {
    pub processors: Vec<Var>,
    /// `None` under [`Routing::Single`].
    pub weights: Option<Var>,
    pub features: Var,
    pub logits: Var,
    pub probs: Var,
    pub loss: Var,
}

#[derive(Clone, Debug)]
pub struct BalancedLearning {
    pub dims: BalancedDims,
    pub processors: Vec<FeedForward>,
    pub gate: Linear,
    pub classifier: Linear,
}

impl BalancedLearning {
    pub fn new(dims: BalancedDims) -> Result<Self> {
        if dims.domains == 0 {
            return Err(Error::Config("emotion domain count x must be >= 1".into()));
        }
        Ok(Self {
            dims,
            processors: (0..dims.domains)
                .map(|j| FeedForward::new(&format!("bl.proc.{j}"), dims.d_m, dims.d_f))
                .collect(),
            gate: Linear::new("bl.gate", dims.d_e_out, dims.domains, true),
            classifier: Linear::new("bl.classifier", dims.d_f, 2, true),
        })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for p in &self.processors {
            p.init(params, rng);
        }
        self.gate.init(params, rng);
        self.classifier.init(params, rng);
    }

    pub fn run_processors(&self, cx: &mut Ctx, m: Var) -> Result<Vec<Var>> {
        self.processors.iter().map(|p| p.forward(cx, m)).collect()
    }

    /// `softmax(G(M_e))`, `[B, x]`.
    pub fn gate_weights(&self, cx: &mut Ctx, m_e: Var) -> Result<Var> {
        let logits = self.gate.forward(cx, m_e)?;
        Ok(cx.graph.softmax_rows(logits)?)
    }

    pub fn forward(&self, cx: &mut Ctx, m: Var, m_e: Var, labels: &[usize], routing: Routing) -> Result<BalancedOutput> {
        let (processors, weights, features) = match routing {
            Routing::Single => {
                let only = self.processors[0].forward(cx, m)?;
                (vec![only], None, only)
            }
            Routing::Gated | Routing::Uniform => {
                let outs = self.run_processors(cx, m)?;
                let a = if routing == Routing::Gated {
                    self.gate_weights(cx, m_e)?
                } else {
                    let batch = cx.graph.shape(m)[0];
                    let x = self.dims.domains;
                    cx.constant(crate::tensor::Tensor::full(&[batch, x], 1.0 / x as f64))?
                };
                let f = aggregate(cx, a, &outs)?;
                (outs, Some(a), f)
            }
        };
        let logits = self.classifier.forward(cx, features)?;
        let probs = cx.graph.softmax_rows(logits)?;
        let loss = cx.graph.cross_entropy(logits, labels)?;
        Ok(BalancedOutput {
            processors,
            weights,
            features,
            logits,
            probs,
            loss,
        })
    }
}
