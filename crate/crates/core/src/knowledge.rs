//! Knowledge augmentation: co-attention between text and evidence and between
//! image and caption, three pooled fusion perspectives, a CLIP-similarity gate
//! on the fused feature, and CLIP-enhanced unimodal features.

use rand_chacha::ChaCha8Rng;

use crate::model::Ablation;
use crate::nn::{FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{Ctx, ModelParams};
use crate::tensor::{Tensor, Var};
use crate::Result;

/// One transformer encoder whose queries come from one sequence and whose
/// keys and values come from another:
///
/// ```text
/// h' = Norm(Q + MultiHead(Q, KV, KV))
/// h  = Norm(h' + FFN(h'))
/// ```
#[derive(Clone, Debug)]
pub struct CoAttentionEncoder {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

/// Encoder output together with what produced it, for inspection in tests.
pub struct EncoderOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

impl CoAttentionEncoder {
    pub fn new(prefix: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(&format!("{prefix}.attn"), d, heads)?,
            norm1: LayerNorm::new(&format!("{prefix}.norm1"), d),
            ffn: FeedForward::new(&format!("{prefix}.ffn"), d, d),
            norm2: LayerNorm::new(&format!("{prefix}.norm2"), d),
        })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.attention.init(params, rng);
        self.norm1.init(params);
        self.ffn.init(params, rng);
        self.norm2.init(params);
    }

    pub fn forward_full(&self, cx: &mut Ctx, query: Var, kv: Var) -> Result<EncoderOutput> {
        let att = self.attention.forward(cx, query, kv)?;
        let res = cx.graph.add(query, att.output)?;
        let h1 = self.norm1.forward(cx, res)?;
        let ff = self.ffn.forward(cx, h1)?;
        let res2 = cx.graph.add(h1, ff)?;
        let h2 = self.norm2.forward(cx, res2)?;
        let output = cx.dropout(h2)?;
        Ok(EncoderOutput {
            output,
            attention: att.probs,
        })
    }

    /// `query: [B, a, d]`, `kv: [B, b, d]` to `[B, a, d]`.
    pub fn forward(&self, cx: &mut Ctx, query: Var, kv: Var) -> Result<Var> {
        Ok(self.forward_full(cx, query, kv)?.output)
    }
}

/// Two encoders with independent weights, each sequence attending over the
/// other. `depth` layers are applied in sequence.
#[derive(Clone, Debug)]
pub struct CoAttentionBlock {
    pub first: Vec<CoAttentionEncoder>,
    pub second: Vec<CoAttentionEncoder>,
}

impl CoAttentionBlock {
    pub fn new(prefix: &str, d: usize, heads: usize, depth: usize) -> Result<Self> {
        let make = |side: &str| -> Result<Vec<CoAttentionEncoder>> {
            (0..depth.max(1))
                .map(|l| CoAttentionEncoder::new(&format!("{prefix}.{side}{l}"), d, heads))
                .collect()
        };
        Ok(Self {
            first: make("a")?,
            second: make("b")?,
        })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for (a, b) in self.first.iter().zip(&self.second) {
            a.init(params, rng);
            b.init(params, rng);
        }
    }

    /// Returns `(a enhanced by b, b enhanced by a)`.
    pub fn forward(&self, cx: &mut Ctx, seq_a: Var, seq_b: Var) -> Result<(Var, Var)> {
        let (mut a, mut b) = (seq_a, seq_b);
        for (ea, eb) in self.first.iter().zip(&self.second) {
            let na = ea.forward(cx, a, b)?;
            let nb = eb.forward(cx, b, a)?;
            a = na;
            b = nb;
        }
        Ok((a, b))
    }
}

/// Mean-pools two sequences, concatenates them and projects with `sigma`.
pub fn build_perspective(cx: &mut Ctx, enh_1: Var, enh_2: Var, sigma: &FeedForward) -> Result<Var> {
    let p1 = cx.graph.mean_axis1(enh_1)?;
    let p2 = cx.graph.mean_axis1(enh_2)?;
    let joined = cx.graph.concat(&[p1, p2])?;
    sigma.forward(cx, joined)
}

pub fn clip_perspective(cx: &mut Ctx, clip_text: Var, clip_image: Var, sigma: &FeedForward) -> Result<Var> {
    let joined = cx.graph.concat(&[clip_text, clip_image])?;
    sigma.forward(cx, joined)
}

/// `max(0, cos(t, v))` for each row pair.
pub fn similarity_gate(clip_text: &Tensor, clip_image: &Tensor) -> Vec<f64> {
    (0..clip_text.rows())
        .map(|r| {
            let (t, v) = (clip_text.row(r), clip_image.row(r));
            let dot: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
            let nt = t.iter().map(|a| a * a).sum::<f64>();
            let nv = v.iter().map(|a| a * a).sum::<f64>();
            // sqrt(nt * nv) so that identical vectors give exactly 1
            (dot / (nt * nv).sqrt()).clamp(0.0, 1.0)
        })
        .collect()
}

/// `θ · σ_f(concat(S1, S2, S3))`, one θ per row.
pub fn fuse_perspectives(
    cx: &mut Ctx,
    perspectives: [Var; 3],
    theta: &[f64],
    sigma: &FeedForward,
) -> Result<Var> {
    let joined = cx.graph.concat(&perspectives)?;
    let fused = sigma.forward(cx, joined)?;
    Ok(cx.graph.scale_rows(fused, theta.to_vec())?)
}

/// `σ(concat(clip, mean(seq)))`.
pub fn enhance_unimodal(cx: &mut Ctx, seq: Var, clip: Var, sigma: &FeedForward) -> Result<Var> {
    let pooled = cx.graph.mean_axis1(seq)?;
    let joined = cx.graph.concat(&[clip, pooled])?;
    sigma.forward(cx, joined)
}

#[derive(Clone, Copy, Debug)]
pub struct KnowledgeDims {
    pub d: usize,
    pub d_c: usize,
    pub d_s: usize,
    pub heads: usize,
    pub depth: usize,
}

/// Graph inputs of the knowledge stage for one batch.
#[derive(Clone, Debug)]
pub struct KnowledgeInputs {
    pub text: Var,
    pub image: Var,
    pub caption: Var,
    pub evidence: Var,
    pub clip_text: Var,
    pub clip_image: Var,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct KnowledgeOutput {
    pub s1: Option<Var>,
    pub s2: Option<Var>,
    pub s3: Option<Var>,
    /// θ actually applied (all ones without CLIP).
    pub theta: Vec<f64>,
    pub m_f: Var,
    pub m_t: Var,
    pub m_v: Var,
}

#[derive(Clone, Debug)]
pub struct KnowledgeAugment {
    pub dims: KnowledgeDims,
    pub text_evidence: CoAttentionBlock,
    pub image_caption: CoAttentionBlock,
    pub sigma1: FeedForward,
    pub sigma2: FeedForward,
    pub sigma3: FeedForward,
    pub sigma_f: FeedForward,
    pub sigma_t: FeedForward,
    pub sigma_v: FeedForward,
}

impl KnowledgeAugment {
    pub fn new(dims: KnowledgeDims) -> Result<Self> {
        let KnowledgeDims { d, d_c, d_s, heads, depth } = dims;
        Ok(Self {
            dims,
            text_evidence: CoAttentionBlock::new("ka.text_evidence", d, heads, depth)?,
            image_caption: CoAttentionBlock::new("ka.image_caption", d, heads, depth)?,
            sigma1: FeedForward::new("ka.s1", 2 * d, d_s),
            sigma2: FeedForward::new("ka.s2", 2 * d, d_s),
            sigma3: FeedForward::new("ka.s3", 2 * d_c, d_s),
            sigma_f: FeedForward::new("ka.fuse", 3 * d_s, d_s),
            sigma_t: FeedForward::new("ka.text", d_c + d, d_s),
            sigma_v: FeedForward::new("ka.image", d_c + d, d_s),
        })
    }

    pub fn init(&self, params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        self.text_evidence.init(params, rng);
        self.image_caption.init(params, rng);
        for f in [
            &self.sigma1,
            &self.sigma2,
            &self.sigma3,
            &self.sigma_f,
            &self.sigma_t,
            &self.sigma_v,
        ] {
            f.init(params, rng);
        }
    }

    fn pair_perspective(
        &self,
        cx: &mut Ctx,
        block: &CoAttentionBlock,
        sigma: &FeedForward,
        a: Var,
        b: Var,
        plain: bool,
    ) -> Result<Var> {
        if plain {
            build_perspective(cx, a, b, sigma)
        } else {
            let (ea, eb) = block.forward(cx, a, b)?;
            build_perspective(cx, ea, eb, sigma)
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: &KnowledgeInputs, ablation: &Ablation) -> Result<KnowledgeOutput> {
        let batch = x.theta.len();
        let d_s = self.dims.d_s;
        let (s1, s2, s3, theta, m_f) = if ablation.ka {
            let zero = cx.constant(Tensor::zeros(&[batch, d_s]))?;
            (None, None, None, x.theta.clone(), zero)
        } else {
            let knowledge_t = if ablation.evidence { x.text } else { x.evidence };
            let knowledge_v = if ablation.caption { x.image } else { x.caption };
            let s1 = self.pair_perspective(cx, &self.text_evidence, &self.sigma1, x.text, knowledge_t, ablation.ca)?;
            let s2 = self.pair_perspective(cx, &self.image_caption, &self.sigma2, x.image, knowledge_v, ablation.ca)?;
            let (s3, theta) = if ablation.clip {
                let zero = cx.constant(Tensor::zeros(&[batch, d_s]))?;
                (zero, vec![1.0; batch])
            } else {
                (
                    clip_perspective(cx, x.clip_text, x.clip_image, &self.sigma3)?,
                    x.theta.clone(),
                )
            };
            let m_f = fuse_perspectives(cx, [s1, s2, s3], &theta, &self.sigma_f)?;
            let s3 = (!ablation.clip).then_some(s3);
            (Some(s1), Some(s2), s3, theta, m_f)
        };
        let (ct, ci) = if ablation.clip {
            let zero = cx.constant(Tensor::zeros(&[batch, self.dims.d_c]))?;
            (zero, zero)
        } else {
            (x.clip_text, x.clip_image)
        };
        let m_t = enhance_unimodal(cx, x.text, ct, &self.sigma_t)?;
        let m_v = enhance_unimodal(cx, x.image, ci, &self.sigma_v)?;
        Ok(KnowledgeOutput {
            s1,
            s2,
            s3,
            theta,
            m_f,
            m_t,
            m_v,
        })
    }
}
