//! Parameterized building blocks. Each layer is a lightweight description of
//! its parameter paths and widths; the tensors themselves live in
//! [`ModelParams`].

use rand_chacha::ChaCha8Rng;

use crate::params::{glorot, Ctx, ModelParams};
use crate::tensor::{Tensor, Var};
use crate::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: bias.then(|| format!("{prefix}.b")),
            d_in,
            d_out,
        }
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        params.insert(&self.weight, glorot(rng, self.d_in, self.d_out));
        if let Some(b) = &self.bias {
            params.insert(b, Tensor::zeros(&[self.d_out]));
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let w = cx.param(&self.weight)?;
        let mut y = cx.graph.matmul(x, w)?;
        if let Some(b) = &self.bias {
            let b = cx.param(b)?;
            y = cx.graph.add_bias(y, b)?;
        }
        Ok(y)
    }
}

/// One hidden layer of width `2 * d_out` with GELU, linear output.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new(prefix: &str, d_in: usize, d_out: usize) -> Self {
        Self::with_hidden(prefix, d_in, 2 * d_out, d_out)
    }

    pub fn with_hidden(prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            hidden: Linear::new(&format!("{prefix}.fc1"), d_in, d_hidden, true),
            output: Linear::new(&format!("{prefix}.fc2"), d_hidden, d_out, true),
        }
    }

    pub fn d_in(&self) -> usize {
        self.hidden.d_in
    }

    pub fn d_out(&self) -> usize {
        self.output.d_out
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.hidden.init(params, rng);
        self.output.init(params, rng);
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.hidden.forward(cx, x)?;
        let h = cx.graph.gelu(h)?;
        self.output.forward(cx, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: String,
    pub bias: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gain: format!("{prefix}.gain"),
            bias: format!("{prefix}.bias"),
            dim,
        }
    }

    pub fn init(&self, params: &mut ModelParams) {
        params.insert(&self.gain, Tensor::ones(&[self.dim]));
        params.insert(&self.bias, Tensor::zeros(&[self.dim]));
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let g = cx.param(&self.gain)?;
        let b = cx.param(&self.bias)?;
        Ok(cx.graph.layer_norm(x, g, b, LAYER_NORM_EPS)?)
    }
}

/// Multi-head scaled dot-product attention of `query` over `kv`, heads
/// concatenated and projected by an output matrix. No projection biases.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
    pub heads: usize,
    pub d: usize,
}

/// Attention output plus the per-head probability tensors `[B, a, b]`.
pub struct AttentionOutput {
    pub output: Var,
    pub probs: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, d: usize, heads: usize) -> crate::Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(crate::Error::Config(format!(
                "width {d} at {prefix} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            w_q: Linear::new(&format!("{prefix}.w_q"), d, d, false),
            w_k: Linear::new(&format!("{prefix}.w_k"), d, d, false),
            w_v: Linear::new(&format!("{prefix}.w_v"), d, d, false),
            w_o: Linear::new(&format!("{prefix}.w_o"), d, d, false),
            heads,
            d,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for l in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            l.init(params, rng);
        }
    }

    /// `query: [B, a, d]`, `kv: [B, b, d]` to `[B, a, d]`.
    pub fn forward(&self, cx: &mut Ctx, query: Var, kv: Var) -> Result<AttentionOutput> {
        let q = self.w_q.forward(cx, query)?;
        let k = self.w_k.forward(cx, kv)?;
        let v = self.w_v.forward(cx, kv)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = cx.graph.slice_last(q, h * dh, dh)?;
            let kh = cx.graph.slice_last(k, h * dh, dh)?;
            let vh = cx.graph.slice_last(v, h * dh, dh)?;
            let scores = cx.graph.bmm(qh, kh, true)?;
            let scores = cx.graph.scale(scores, scale)?;
            let p = cx.graph.softmax_rows(scores)?;
            outs.push(cx.graph.bmm(p, vh, false)?);
            probs.push(p);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            cx.graph.concat(&outs)?
        };
        let output = self.w_o.forward(cx, joined)?;
        Ok(AttentionOutput { output, probs })
    }
}
