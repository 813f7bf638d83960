//! Emotion analysis: `k` Bi-LSTM + self-attention experts per modality,
//! averaged, mixed by γ, plus the auxiliary emotion-reasoning head.

use rand_chacha::ChaCha8Rng;

use crate::nn::{FeedForward, Linear, MultiHeadAttention};
use crate::params::{Ctx, ModelParams};
use crate::tensor::{TensorError, Var};
use crate::{Error, Result};

/// LSTM cell with gate layout `[input, forget, cell, output]` along the last axis.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: &str, d_in: usize, hidden: usize) -> Self {
        Self {
            input: Linear::new(&format!("{prefix}.w_x"), d_in, 4 * hidden, true),
            recurrent: Linear::new(&format!("{prefix}.w_h"), hidden, 4 * hidden, false),
            hidden,
        }
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.input.init(params, rng);
        self.recurrent.init(params, rng);
    }

    /// Runs over `[B, L, d]` in the given position order and returns the
    /// hidden state at every position, indexed by position. State starts at zero.
    pub fn run(&self, cx: &mut Ctx, seq: Var, reverse: bool) -> Result<Vec<Var>> {
        let len = cx.graph.shape(seq)[1];
        let h_dim = self.hidden;
        let projected = self.input.forward(cx, seq)?;
        let mut states: Vec<Option<Var>> = vec![None; len];
        let mut prev: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for pos in order {
            let mut pre = cx.graph.select_axis1(projected, pos)?;
            if let Some((h, _)) = prev {
                let rec = self.recurrent.forward(cx, h)?;
                pre = cx.graph.add(pre, rec)?;
            }
            let i = cx.graph.slice_last(pre, 0, h_dim)?;
            let i = cx.graph.sigmoid(i)?;
            let g = cx.graph.slice_last(pre, 2 * h_dim, h_dim)?;
            let g = cx.graph.tanh(g)?;
            let o = cx.graph.slice_last(pre, 3 * h_dim, h_dim)?;
            let o = cx.graph.sigmoid(o)?;
            let mut c = cx.graph.mul(i, g)?;
            if let Some((_, c_prev)) = prev {
                let f = cx.graph.slice_last(pre, h_dim, h_dim)?;
                let f = cx.graph.sigmoid(f)?;
                let kept = cx.graph.mul(f, c_prev)?;
                c = cx.graph.add(kept, c)?;
            }
            let tc = cx.graph.tanh(c)?;
            let h = cx.graph.mul(o, tc)?;
            states[pos] = Some(h);
            prev = Some((h, c));
        }
        Ok(states.into_iter().map(|s| s.expect("every position visited")).collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExpertDims {
    pub d: usize,
    pub d_e: usize,
    pub d_e_out: usize,
    pub heads: usize,
}

/// `σ(SelfAtt(BiLSTM(seq)))`, mean-pooled before the feed-forward.
#[derive(Clone, Debug)]
pub struct EmotionExpert {
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
    pub attention: MultiHeadAttention,
    pub ffn: FeedForward,
}

/// Expert output plus its intermediate attention probabilities.
pub struct ExpertOutput {
    pub output: Var,
    pub bilstm: Var,
    pub attention: Vec<Var>,
}

impl EmotionExpert {
    pub fn new(prefix: &str, dims: ExpertDims) -> Result<Self> {
        Ok(Self {
            forward_cell: LstmCell::new(&format!("{prefix}.lstm_fwd"), dims.d, dims.d_e),
            backward_cell: LstmCell::new(&format!("{prefix}.lstm_bwd"), dims.d, dims.d_e),
            attention: MultiHeadAttention::new(&format!("{prefix}.attn"), 2 * dims.d_e, dims.heads)?,
            ffn: FeedForward::new(&format!("{prefix}.ffn"), 2 * dims.d_e, dims.d_e_out),
        })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.forward_cell.init(params, rng);
        self.backward_cell.init(params, rng);
        self.attention.init(params, rng);
        self.ffn.init(params, rng);
    }

    pub fn forward_full(&self, cx: &mut Ctx, seq: Var) -> Result<ExpertOutput> {
        let fwd = self.forward_cell.run(cx, seq, false)?;
        let bwd = self.backward_cell.run(cx, seq, true)?;
        let mut joined = Vec::with_capacity(fwd.len());
        for (f, b) in fwd.into_iter().zip(bwd) {
            joined.push(cx.graph.concat(&[f, b])?);
        }
        let bilstm = cx.graph.stack_axis1(&joined)?;
        let att = self.attention.forward(cx, bilstm, bilstm)?;
        let attended = cx.dropout(att.output)?;
        let pooled = cx.graph.mean_axis1(attended)?;
        let output = self.ffn.forward(cx, pooled)?;
        Ok(ExpertOutput {
            output,
            bilstm,
            attention: att.probs,
        })
    }

    /// `[B, L, d]` to `[B, d_e_out]`.
    pub fn forward(&self, cx: &mut Ctx, seq: Var) -> Result<Var> {
        Ok(self.forward_full(cx, seq)?.output)
    }
}

/// Arithmetic mean of the expert outputs.
pub fn aggregate_experts(cx: &mut Ctx, outputs: &[Var]) -> Result<Var> {
    let (&first, rest) = outputs.split_first().ok_or(TensorError::Invalid {
        op: "aggregate_experts",
        msg: "no expert outputs".into(),
    })?;
    let mut acc = first;
    for &o in rest {
        acc = cx.graph.add(acc, o)?;
    }
    if outputs.len() == 1 {
        return Ok(acc);
    }
    Ok(cx.graph.scale(acc, 1.0 / outputs.len() as f64)?)
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

/// `σ_e(concat(γ e_t, (1 - γ) e_v))`.
pub fn combine_emotions(cx: &mut Ctx, e_t: Var, e_v: Var, gamma: f64, sigma: &FeedForward) -> Result<Var> {
    check_gamma(gamma)?;
    let t = cx.graph.scale(e_t, gamma)?;
    let v = cx.graph.scale(e_v, 1.0 - gamma)?;
    let joined = cx.graph.concat(&[t, v])?;
    sigma.forward(cx, joined)
}

/// Returns `(softmax(M_e W_e + b_e), cross-entropy against the veracity labels)`.
pub fn emotion_reasoning_loss(cx: &mut Ctx, m_e: Var, labels: &[usize], head: &Linear) -> Result<(Var, Var)> {
    let logits = head.forward(cx, m_e)?;
    let probs = cx.graph.softmax_rows(logits)?;
    let loss = cx.graph.cross_entropy(logits, labels)?;
    Ok((probs, loss))
}

#[derive(Clone, Copy, Debug)]
pub struct EmotionDims {
    pub d: usize,
    pub d_e: usize,
    pub d_e_out: usize,
    pub heads: usize,
    pub experts: usize,
}

pub struct EmotionOutput {
    pub e_t: Var,
    pub e_v: Var,
    pub m_e: Var,
    pub probs: Var,
    pub loss: Var,
}

#[derive(Clone, Debug)]
pub struct EmotionAnalysis {
    pub dims: EmotionDims,
    pub text_experts: Vec<EmotionExpert>,
    pub image_experts: Vec<EmotionExpert>,
    pub sigma_e: FeedForward,
    pub head: Linear,
}

impl EmotionAnalysis {
    pub fn new(dims: EmotionDims) -> Result<Self> {
        if dims.experts == 0 {
            return Err(Error::Config("expert count k must be >= 1".into()));
        }
        let ed = ExpertDims {
            d: dims.d,
            d_e: dims.d_e,
            d_e_out: dims.d_e_out,
            heads: dims.heads,
        };
        let make = |modality: &str| -> Result<Vec<EmotionExpert>> {
            (0..dims.experts)
                .map(|k| EmotionExpert::new(&format!("emo.{modality}.{k}"), ed))
                .collect()
        };
        Ok(Self {
            dims,
            text_experts: make("text")?,
            image_experts: make("image")?,
            sigma_e: FeedForward::new("emo.combine", 2 * dims.d_e_out, dims.d_e_out),
            head: Linear::new("emo.head", dims.d_e_out, 2, true),
        })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for e in self.text_experts.iter().chain(&self.image_experts) {
            e.init(params, rng);
        }
        self.sigma_e.init(params, rng);
        self.head.init(params, rng);
    }

    pub fn forward(&self, cx: &mut Ctx, text: Var, image: Var, labels: &[usize], gamma: f64) -> Result<EmotionOutput> {
        let mut run = |experts: &[EmotionExpert], seq: Var| -> Result<Var> {
            let outs = experts
                .iter()
                .map(|e| e.forward(cx, seq))
                .collect::<Result<Vec<_>>>()?;
            aggregate_experts(cx, &outs)
        };
        let e_t = run(&self.text_experts, text)?;
        let e_v = run(&self.image_experts, image)?;
        let m_e = combine_emotions(cx, e_t, e_v, gamma, &self.sigma_e)?;
        let (probs, loss) = emotion_reasoning_loss(cx, m_e, labels, &self.head)?;
        Ok(EmotionOutput {
            e_t,
            e_v,
            m_e,
            probs,
            loss,
        })
    }
}
