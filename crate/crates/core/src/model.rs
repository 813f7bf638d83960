//! The assembled detector: knowledge augmentation, emotion analysis and
//! balanced learning over one batch, plus ablation switches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::balanced::{check_lambda, concat_features, total_loss, BalancedDims, BalancedLearning, BalancedOutput, Routing};
use crate::data::{Batch, DataDims};
use crate::emotion::{check_gamma, EmotionAnalysis, EmotionDims, EmotionOutput};
use crate::knowledge::{similarity_gate, KnowledgeAugment, KnowledgeDims, KnowledgeInputs, KnowledgeOutput};
use crate::params::{Ctx, ModelParams};
use crate::rng::{stream, Stream};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Ablation switches. Every switch keeps parameter shapes unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// No knowledge fusion: `M_f` is zero.
    pub ka: bool,
    /// No CLIP: `S3` is zero, θ is 1 and the unimodal CLIP slots are zero.
    pub clip: bool,
    /// Text attends to itself instead of the evidence.
    pub evidence: bool,
    /// Image attends to itself instead of the caption.
    pub caption: bool,
    /// Pooled concatenation instead of co-attention.
    pub ca: bool,
    /// No emotion analysis and a single processor.
    pub eg: bool,
    /// A single processor.
    pub bl: bool,
    /// Uniform processor weights.
    pub gate: bool,
    /// The emotion loss is left out of the total.
    pub er: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationFlag {
    Ka,
    Clip,
    Evidence,
    Caption,
    Ca,
    Eg,
    Bl,
    Gate,
    Er,
}

impl AblationFlag {
    pub const ALL: [AblationFlag; 9] = [
        AblationFlag::Ka,
        AblationFlag::Clip,
        AblationFlag::Evidence,
        AblationFlag::Caption,
        AblationFlag::Ca,
        AblationFlag::Eg,
        AblationFlag::Bl,
        AblationFlag::Gate,
        AblationFlag::Er,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationFlag::Ka => "KA",
            AblationFlag::Clip => "CLIP",
            AblationFlag::Evidence => "Evidence",
            AblationFlag::Caption => "Caption",
            AblationFlag::Ca => "CA",
            AblationFlag::Eg => "EG",
            AblationFlag::Bl => "BL",
            AblationFlag::Gate => "Gate",
            AblationFlag::Er => "ER",
        }
    }

    /// Stages whose values may differ from the unablated model. A name ending
    /// in `.` matches every stage with that prefix.
    pub fn footprint(self) -> &'static [&'static str] {
        match self {
            AblationFlag::Ka => &["s1", "s2", "s3", "m_f", "m", "proc.", "f", "yhat_f", "l_fnd", "loss"],
            AblationFlag::Clip => &[
                "s3", "theta", "m_f", "m_t", "m_v", "m", "proc.", "f", "yhat_f", "l_fnd", "loss",
            ],
            AblationFlag::Evidence => &["s1", "m_f", "m", "proc.", "f", "yhat_f", "l_fnd", "loss"],
            AblationFlag::Caption => &["s2", "m_f", "m", "proc.", "f", "yhat_f", "l_fnd", "loss"],
            AblationFlag::Ca => &["s1", "s2", "m_f", "m", "proc.", "f", "yhat_f", "l_fnd", "loss"],
            AblationFlag::Eg => &[
                "e_t", "e_v", "m_e", "yhat_e", "l_emo", "m", "proc.", "a", "f", "yhat_f", "l_fnd", "loss",
            ],
            AblationFlag::Bl => &["proc.", "a", "f", "yhat_f", "l_fnd", "loss"],
            AblationFlag::Gate => &["a", "f", "yhat_f", "l_fnd", "loss"],
            AblationFlag::Er => &["loss"],
        }
    }

    pub fn allows(self, stage: &str) -> bool {
        self.footprint()
            .iter()
            .any(|p| if p.ends_with('.') { stage.starts_with(p) } else { stage == *p })
    }
}

impl fmt::Display for AblationFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w/o-{}", self.name())
    }
}

impl FromStr for AblationFlag {
    type Err = Error;

    /// Accepts `KA`, `ka`, `w/o-KA`, `w/o KA` and `wo_ka`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = ["w/o-", "w/o_", "w/o ", "w/o", "wo-", "wo_"]
            .iter()
            .find_map(|p| t.strip_prefix(p))
            .unwrap_or(&t)
            .trim();
        AblationFlag::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Config(format!("unknown ablation flag {s:?}")))
    }
}

impl Ablation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_flags(flags: &[AblationFlag]) -> Self {
        let mut a = Self::default();
        for &f in flags {
            a.set(f, true);
        }
        a
    }

    pub fn set(&mut self, flag: AblationFlag, on: bool) {
        let slot = match flag {
            AblationFlag::Ka => &mut self.ka,
            AblationFlag::Clip => &mut self.clip,
            AblationFlag::Evidence => &mut self.evidence,
            AblationFlag::Caption => &mut self.caption,
            AblationFlag::Ca => &mut self.ca,
            AblationFlag::Eg => &mut self.eg,
            AblationFlag::Bl => &mut self.bl,
            AblationFlag::Gate => &mut self.gate,
            AblationFlag::Er => &mut self.er,
        };
        *slot = on;
    }

    pub fn with(mut self, flag: AblationFlag) -> Self {
        self.set(flag, true);
        self
    }

    pub fn flags(&self) -> Vec<AblationFlag> {
        AblationFlag::ALL
            .into_iter()
            .filter(|&f| Self::default().with(f).overlaps(self))
            .collect()
    }

    fn overlaps(&self, other: &Self) -> bool {
        (self.ka && other.ka)
            || (self.clip && other.clip)
            || (self.evidence && other.evidence)
            || (self.caption && other.caption)
            || (self.ca && other.ca)
            || (self.eg && other.eg)
            || (self.bl && other.bl)
            || (self.gate && other.gate)
            || (self.er && other.er)
    }

    /// Parses a comma-separated flag list; an empty string gives no flags.
    pub fn parse_list(s: &str) -> Result<Vec<AblationFlag>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(AblationFlag::from_str)
            .collect()
    }

    pub fn label(&self) -> String {
        let flags = self.flags();
        if flags.is_empty() {
            "full".into()
        } else {
            flags.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
        }
    }

    fn routing(&self) -> Routing {
        if self.eg || self.bl {
            Routing::Single
        } else if self.gate {
            Routing::Uniform
        } else {
            Routing::Gated
        }
    }
}

/// Every width and count of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d: usize,
    pub d_c: usize,
    pub d_s: usize,
    pub d_e: usize,
    pub d_e_out: usize,
    pub d_f: usize,
    /// Co-attention heads.
    pub heads: usize,
    /// Self-attention heads inside each emotion expert.
    pub expert_heads: usize,
    /// Experts per modality, `k`.
    pub experts: usize,
    /// Emotion domains, `x`.
    pub domains: usize,
    /// Stacked co-attention layers.
    pub depth: usize,
}

impl ModelDims {
    /// Small widths for tests, matched to [`DataDims`].
    pub fn small(data: DataDims) -> Self {
        Self {
            d: data.d,
            d_c: data.d_c,
            d_s: 8,
            d_e: 4,
            d_e_out: 4,
            d_f: 8,
            heads: 2,
            expert_heads: 1,
            experts: 2,
            domains: 3,
            depth: 1,
        }
    }

    pub fn d_m(&self) -> usize {
        3 * self.d_s + self.d_e_out
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("d", self.d),
            ("d_c", self.d_c),
            ("d_s", self.d_s),
            ("d_e", self.d_e),
            ("d_e_out", self.d_e_out),
            ("d_f", self.d_f),
            ("heads", self.heads),
            ("expert_heads", self.expert_heads),
            ("experts", self.experts),
            ("domains", self.domains),
            ("depth", self.depth),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model dimension {name} must be >= 1")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d = {} is not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if !(2 * self.d_e).is_multiple_of(self.expert_heads) {
            return Err(Error::Config(format!(
                "2 * d_e = {} is not divisible by expert_heads = {}",
                2 * self.d_e,
                self.expert_heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { gamma: 0.7, lambda: 0.2 }
    }
}

pub struct ForwardOutput {
    pub knowledge: KnowledgeOutput,
    /// `None` without emotion analysis.
    pub emotion: Option<EmotionOutput>,
    pub m_e: Var,
    pub m: Var,
    pub balanced: BalancedOutput,
    pub l_fnd: Var,
    pub l_emo: Option<Var>,
    pub loss: Var,
}

/// Named stage values from one forward pass.
pub type FeaturePack = BTreeMap<String, Tensor>;

impl ForwardOutput {
    pub fn features(&self, graph: &Graph) -> FeaturePack {
        let mut out = FeaturePack::new();
        let mut put = |name: &str, v: Var| {
            out.insert(name.to_string(), graph.value(v).clone());
        };
        let k = &self.knowledge;
        for (name, v) in [("s1", k.s1), ("s2", k.s2), ("s3", k.s3)] {
            if let Some(v) = v {
                put(name, v);
            }
        }
        put("m_f", k.m_f);
        put("m_t", k.m_t);
        put("m_v", k.m_v);
        if let Some(e) = &self.emotion {
            put("e_t", e.e_t);
            put("e_v", e.e_v);
            put("yhat_e", e.probs);
        }
        put("m_e", self.m_e);
        put("m", self.m);
        for (j, &p) in self.balanced.processors.iter().enumerate() {
            put(&format!("proc.{j}"), p);
        }
        if let Some(a) = self.balanced.weights {
            put("a", a);
        }
        put("f", self.balanced.features);
        put("yhat_f", self.balanced.probs);
        put("l_fnd", self.l_fnd);
        if let Some(l) = self.l_emo {
            put("l_emo", l);
        }
        put("loss", self.loss);
        let theta = Tensor::new(vec![k.theta.len(), 1], k.theta.clone()).expect("theta column");
        out.insert("theta".into(), theta);
        out
    }
}

/// Argmax over two classes with ties resolved toward class 0 (fake).
pub fn predict(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let p = probs.row(r);
            usize::from(p[1] > p[0])
        })
        .collect()
}

/// Stage names whose values differ between two packs, including stages
/// present in only one of them.
pub fn changed_stages(base: &FeaturePack, other: &FeaturePack) -> BTreeSet<String> {
    let names: BTreeSet<&String> = base.keys().chain(other.keys()).collect();
    names
        .into_iter()
        .filter(|n| match (base.get(*n), other.get(*n)) {
            (Some(a), Some(b)) => a != b,
            _ => true,
        })
        .cloned()
        .collect()
}

#[derive(Clone, Debug)]
pub struct Ken {
    pub dims: ModelDims,
    pub ablation: Ablation,
    pub knowledge: KnowledgeAugment,
    pub emotion: EmotionAnalysis,
    pub balanced: BalancedLearning,
}

impl Ken {
    pub fn new(dims: ModelDims, ablation: Ablation) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            ablation,
            knowledge: KnowledgeAugment::new(KnowledgeDims {
                d: dims.d,
                d_c: dims.d_c,
                d_s: dims.d_s,
                heads: dims.heads,
                depth: dims.depth,
            })?,
            emotion: EmotionAnalysis::new(EmotionDims {
                d: dims.d,
                d_e: dims.d_e,
                d_e_out: dims.d_e_out,
                heads: dims.expert_heads,
                experts: dims.experts,
            })?,
            balanced: BalancedLearning::new(BalancedDims {
                d_m: dims.d_m(),
                d_e_out: dims.d_e_out,
                d_f: dims.d_f,
                domains: dims.domains,
            })?,
        })
    }

    /// Fresh parameters from the init stream of `seed`. Ablations do not
    /// change the result.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = stream(seed, Stream::Init);
        let mut params = ModelParams::new();
        self.knowledge.init(&mut params, &mut rng);
        self.emotion.init(&mut params, &mut rng);
        self.balanced.init(&mut params, &mut rng);
        params
    }

    pub fn check_data(&self, data: &DataDims) -> Result<()> {
        if data.d != self.dims.d || data.d_c != self.dims.d_c {
            return Err(Error::Config(format!(
                "model expects d = {}, d_c = {} but data has d = {}, d_c = {}",
                self.dims.d, self.dims.d_c, data.d, data.d_c
            )));
        }
        Ok(())
    }

    pub fn forward(&self, cx: &mut Ctx, batch: &Batch, opts: ForwardOptions) -> Result<ForwardOutput> {
        check_gamma(opts.gamma)?;
        check_lambda(opts.lambda)?;
        let ab = &self.ablation;
        let inputs = KnowledgeInputs {
            text: cx.constant(batch.text.clone())?,
            image: cx.constant(batch.image.clone())?,
            caption: cx.constant(batch.caption.clone())?,
            evidence: cx.constant(batch.evidence.clone())?,
            clip_text: cx.constant(batch.clip_text.clone())?,
            clip_image: cx.constant(batch.clip_image.clone())?,
            theta: similarity_gate(&batch.clip_text, &batch.clip_image),
        };
        let knowledge = self.knowledge.forward(cx, &inputs, ab)?;

        let (emotion, m_e) = if ab.eg {
            let zero = cx.constant(Tensor::zeros(&[batch.len(), self.dims.d_e_out]))?;
            (None, zero)
        } else {
            let e = self
                .emotion
                .forward(cx, inputs.text, inputs.image, &batch.labels, opts.gamma)?;
            let m_e = e.m_e;
            (Some(e), m_e)
        };

        let m = concat_features(cx, knowledge.m_t, knowledge.m_v, m_e, knowledge.m_f)?;
        let balanced = self.balanced.forward(cx, m, m_e, &batch.labels, ab.routing())?;
        let l_fnd = balanced.loss;
        let l_emo = emotion.as_ref().map(|e| e.loss);
        let loss = match l_emo {
            Some(l) if !ab.er => total_loss(cx, l_fnd, l, opts.lambda)?,
            _ => l_fnd,
        };
        Ok(ForwardOutput {
            knowledge,
            emotion,
            m_e,
            m,
            balanced,
            l_fnd,
            l_emo,
            loss,
        })
    }
}
