//! Seeded stand-in for encoder outputs.
//!
//! Each sample belongs to one latent emotion cluster `c`, and its label is
//! drawn with a cluster-dependent propensity. Content carries the label along
//! cluster-specific directions:
//!
//! * text and evidence rows: `noise ± (sep / 2) · a_c`
//! * image and caption rows: `noise ± (sep / 2) · b_c`
//! * text and image rows additionally carry the cluster signature `e_c`
//!   with sign `+1` over the first half of the positions and `-1` over the
//!   second half, so it cancels under mean pooling and is only visible to
//!   order-aware encoders.
//!
//! With `alternate_domain_signs` the clusters share one direction per
//! modality (and the CLIP label direction) but the sign of the label signal
//! alternates with cluster parity.
//!
//! CLIP pairs alternate between matched (shared base vector, cosine near 1)
//! and unmatched (independent draws, cosine near 0). Within each cluster the
//! two class means are `class_separation` apart.
//!
//! All values are rounded to `f32` so that a write/read cycle through the
//! blob format is lossless.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{split, DataDims, DataError, Dataset, EmbeddingBundle, Label};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub samples: usize,
    pub d: usize,
    pub d_c: usize,
    pub m: usize,
    pub n: usize,
    pub z: usize,
    pub u: usize,
    pub class_separation: f64,
    pub emotion_clusters: usize,
    pub seed: u64,
    /// Magnitude of the order-encoded cluster signature; defaults to
    /// `class_separation`.
    #[serde(default)]
    pub emotion_strength: Option<f64>,
    /// `P(real | c)` ramps linearly from `1 - ρ` to `ρ` across clusters.
    #[serde(default = "default_correlation")]
    pub cluster_label_correlation: f64,
    #[serde(default = "default_ratios")]
    pub split_ratios: [f64; 3],
    /// All clusters share one content direction per modality and the label
    /// sign flips with cluster parity, so content is only informative once
    /// the cluster is known.
    #[serde(default)]
    pub alternate_domain_signs: bool,
}

fn default_name() -> String {
    "synthetic".into()
}

fn default_correlation() -> f64 {
    0.9
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl SyntheticSpec {
    /// Tiny dims used throughout the test suite.
    pub fn small(seed: u64) -> Self {
        Self {
            name: default_name(),
            samples: 32,
            d: 8,
            d_c: 4,
            m: 4,
            n: 4,
            z: 4,
            u: 4,
            class_separation: 5.0,
            emotion_clusters: 3,
            seed,
            emotion_strength: None,
            cluster_label_correlation: default_correlation(),
            split_ratios: default_ratios(),
            alternate_domain_signs: false,
        }
    }

    pub fn dims(&self) -> DataDims {
        DataDims {
            d: self.d,
            d_c: self.d_c,
            m: self.m,
            n: self.n,
            z: self.z,
            u: self.u,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        self.dims().validate()?;
        if self.samples == 0 {
            return Err(DataError::Dims("samples must be >= 1".into()));
        }
        if self.emotion_clusters == 0 {
            return Err(DataError::Dims("emotion_clusters must be >= 1".into()));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(DataError::Dims(format!(
                "class_separation must be finite and >= 0, got {}",
                self.class_separation
            )));
        }
        if let Some(s) = self.emotion_strength {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(DataError::Dims(format!("emotion_strength must be >= 0, got {s}")));
            }
        }
        if !(0.5..=1.0).contains(&self.cluster_label_correlation) {
            return Err(DataError::Dims(format!(
                "cluster_label_correlation must lie in [0.5, 1], got {}",
                self.cluster_label_correlation
            )));
        }
        Ok(())
    }

    fn real_propensity(&self, cluster: usize) -> f64 {
        if self.emotion_clusters == 1 {
            return 0.5;
        }
        let rho = self.cluster_label_correlation;
        (1.0 - rho) + (2.0 * rho - 1.0) * cluster as f64 / (self.emotion_clusters - 1) as f64
    }
}

fn q(v: f64) -> f64 {
    v as f32 as f64
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, len);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `+1` on the first half of the positions, `-1` on the second half and `0`
/// on the middle position of an odd length, so the pattern sums to zero.
pub(crate) fn position_sign(pos: usize, len: usize) -> f64 {
    let half = len / 2;
    if pos < half {
        1.0
    } else if pos >= len - half {
        -1.0
    } else {
        0.0
    }
}

struct Structure {
    text_dir: Vec<Vec<f64>>,
    image_dir: Vec<Vec<f64>>,
    text_emotion: Vec<Vec<f64>>,
    image_emotion: Vec<Vec<f64>>,
    clip_dir: Vec<f64>,
}

fn sequence(
    rng: &mut ChaCha8Rng,
    len: usize,
    d: usize,
    content: &[f64],
    content_scale: f64,
    emotion: Option<(&[f64], f64)>,
) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        let noise = gaussian(rng, d);
        let e = emotion.map(|(dir, s)| (dir, s * position_sign(pos, len)));
        for j in 0..d {
            let mut v = noise[j] + content_scale * content[j];
            if let Some((dir, s)) = e {
                v += s * dir[j];
            }
            data.push(q(v));
        }
    }
    Tensor::new(vec![len, d], data).expect("sequence shape")
}

/// Generates a dataset and the latent cluster id of every sample.
pub fn generate_synthetic_with_clusters(spec: &SyntheticSpec) -> Result<(Dataset, Vec<usize>), DataError> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Synth);
    let c = spec.emotion_clusters;
    let mut st = Structure {
        text_dir: (0..c).map(|_| unit(&mut rng, spec.d)).collect(),
        image_dir: (0..c).map(|_| unit(&mut rng, spec.d)).collect(),
        text_emotion: (0..c).map(|_| unit(&mut rng, spec.d)).collect(),
        image_emotion: (0..c).map(|_| unit(&mut rng, spec.d)).collect(),
        clip_dir: unit(&mut rng, spec.d_c),
    };
    if spec.alternate_domain_signs {
        for dirs in [&mut st.text_dir, &mut st.image_dir] {
            let shared = dirs[0].clone();
            for (k, dir) in dirs.iter_mut().enumerate() {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                *dir = shared.iter().map(|v| sign * v).collect();
            }
        }
    }
    let half = spec.class_separation / 2.0;
    let strength = spec.emotion_strength.unwrap_or(spec.class_separation);

    let mut samples = Vec::with_capacity(spec.samples);
    let mut clusters = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let cluster = rng.random_range(0..c);
        let label = if rng.random::<f64>() < spec.real_propensity(cluster) {
            Label::Real
        } else {
            Label::Fake
        };
        let sign = if label == Label::Real { 1.0 } else { -1.0 };
        let scale = sign * half;

        let text = sequence(
            &mut rng,
            spec.m,
            spec.d,
            &st.text_dir[cluster],
            scale,
            Some((&st.text_emotion[cluster], strength)),
        );
        let evidence = sequence(&mut rng, spec.u, spec.d, &st.text_dir[cluster], scale, None);
        let image = sequence(
            &mut rng,
            spec.n,
            spec.d,
            &st.image_dir[cluster],
            scale,
            Some((&st.image_emotion[cluster], strength)),
        );
        let caption = sequence(&mut rng, spec.z, spec.d, &st.image_dir[cluster], scale, None);

        let clip_scale = if spec.alternate_domain_signs && cluster % 2 == 1 {
            -scale
        } else {
            scale
        };
        let matched = i % 2 == 0;
        let n1 = gaussian(&mut rng, spec.d_c);
        let n2 = gaussian(&mut rng, spec.d_c);
        let (ct, ci): (Vec<f64>, Vec<f64>) = if matched {
            let base = gaussian(&mut rng, spec.d_c);
            (0..spec.d_c)
                .map(|j| {
                    let shared = base[j] + clip_scale * st.clip_dir[j];
                    (q(shared + 0.1 * n1[j]), q(shared + 0.1 * n2[j]))
                })
                .unzip()
        } else {
            (0..spec.d_c)
                .map(|j| (q(n1[j] + clip_scale * st.clip_dir[j]), q(n2[j])))
                .unzip()
        };

        samples.push(EmbeddingBundle {
            id: format!("s{i:05}"),
            text,
            image,
            caption,
            evidence,
            clip_text: Tensor::vector(ct).expect("clip shape"),
            clip_image: Tensor::vector(ci).expect("clip shape"),
            label,
        });
        clusters.push(cluster);
    }
    let splits = split(&samples, spec.split_ratios, spec.seed)?;
    let ds = Dataset {
        name: spec.name.clone(),
        dims: spec.dims(),
        samples,
        splits,
        split_seed: spec.seed,
    };
    ds.validate()?;
    Ok((ds, clusters))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    generate_synthetic_with_clusters(spec).map(|(d, _)| d)
}
