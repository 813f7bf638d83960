//! Embedding bundles: the per-sample inputs of the model, their on-disk
//! format, a seeded synthetic generator and stratified splits.

pub mod blob;
mod manifest;
mod split;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use manifest::{load_bundle, load_dataset, write_dataset, DatasetManifest, ManifestItem, MANIFEST_FILE};
pub use split::split;
pub use synthetic::{generate_synthetic, generate_synthetic_with_clusters, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("sample {id}: tensor {tensor}: {source}")]
    Blob {
        id: String,
        tensor: &'static str,
        #[source]
        source: blob::BlobError,
    },
    #[error("sample {id}: tensor {tensor} has {actual} payload bytes, header implies {expected}")]
    ByteLength {
        id: String,
        tensor: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("sample {id}: tensor {tensor} has shape {actual:?}, expected {expected:?}")]
    Shape {
        id: String,
        tensor: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("sample {id}: tensor {tensor} has a non-finite value at index {index}")]
    NonFinite {
        id: String,
        tensor: &'static str,
        index: usize,
    },
    #[error("sample {id}: CLIP vector {tensor} has zero norm")]
    ZeroNorm { id: String, tensor: &'static str },
    #[error("sample {id}: label {label} is outside {{0, 1}}")]
    Label { id: String, label: i64 },
    #[error("invalid dimensions: {0}")]
    Dims(String),
    #[error("split ratios {0:?} must be positive and sum to 1")]
    Ratios([f64; 3]),
    #[error("invalid splits: {0}")]
    Splits(String),
}

/// Veracity label. `Fake` is class 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Fake,
    Real,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Fake => 0,
            Label::Real => 1,
        }
    }

    pub fn from_index(i: i64) -> Option<Self> {
        match i {
            0 => Some(Label::Fake),
            1 => Some(Label::Real),
            _ => None,
        }
    }
}

/// Sequence lengths and embedding widths shared by every sample of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDims {
    /// Sequence embedding width.
    pub d: usize,
    /// CLIP vector width.
    pub d_c: usize,
    /// Text length.
    pub m: usize,
    /// Image regions.
    pub n: usize,
    /// Caption length.
    pub z: usize,
    /// Evidence length.
    pub u: usize,
}

impl DataDims {
    pub fn validate(&self) -> Result<(), DataError> {
        let all = [self.d, self.d_c, self.m, self.n, self.z, self.u];
        if all.contains(&0) {
            return Err(DataError::Dims(format!("all dims must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Identifies one of the six tensors of a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Text,
    Image,
    Caption,
    Evidence,
    ClipText,
    ClipImage,
}

impl Field {
    pub const ALL: [Field; 6] = [
        Field::Text,
        Field::Image,
        Field::Caption,
        Field::Evidence,
        Field::ClipText,
        Field::ClipImage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Text => "text",
            Field::Image => "image",
            Field::Caption => "caption",
            Field::Evidence => "evidence",
            Field::ClipText => "clip_text",
            Field::ClipImage => "clip_image",
        }
    }

    pub fn expected_shape(self, dims: &DataDims) -> Vec<usize> {
        match self {
            Field::Text => vec![dims.m, dims.d],
            Field::Image => vec![dims.n, dims.d],
            Field::Caption => vec![dims.z, dims.d],
            Field::Evidence => vec![dims.u, dims.d],
            Field::ClipText | Field::ClipImage => vec![dims.d_c],
        }
    }
}

/// Precomputed encoder outputs for one news item.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    pub id: String,
    /// `[m, d]` text token embeddings.
    pub text: Tensor,
    /// `[n, d]` image region embeddings.
    pub image: Tensor,
    /// `[z, d]` caption token embeddings.
    pub caption: Tensor,
    /// `[u, d]` evidence token embeddings.
    pub evidence: Tensor,
    /// `[d_c]` CLIP text vector.
    pub clip_text: Tensor,
    /// `[d_c]` CLIP image vector.
    pub clip_image: Tensor,
    pub label: Label,
}

impl EmbeddingBundle {
    pub fn field(&self, f: Field) -> &Tensor {
        match f {
            Field::Text => &self.text,
            Field::Image => &self.image,
            Field::Caption => &self.caption,
            Field::Evidence => &self.evidence,
            Field::ClipText => &self.clip_text,
            Field::ClipImage => &self.clip_image,
        }
    }

    pub fn field_mut(&mut self, f: Field) -> &mut Tensor {
        match f {
            Field::Text => &mut self.text,
            Field::Image => &mut self.image,
            Field::Caption => &mut self.caption,
            Field::Evidence => &mut self.evidence,
            Field::ClipText => &mut self.clip_text,
            Field::ClipImage => &mut self.clip_image,
        }
    }

    /// Checks the bundle against `dims`: shapes, finiteness, non-zero CLIP vectors.
    pub fn validate(&self, dims: &DataDims) -> Result<(), DataError> {
        for f in Field::ALL {
            let t = self.field(f);
            let expected = f.expected_shape(dims);
            if t.shape() != expected.as_slice() {
                return Err(DataError::Shape {
                    id: self.id.clone(),
                    tensor: f.name(),
                    expected,
                    actual: t.shape().to_vec(),
                });
            }
            if let Some(index) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    id: self.id.clone(),
                    tensor: f.name(),
                    index,
                });
            }
        }
        for f in [Field::ClipText, Field::ClipImage] {
            if self.field(f).l2_norm() == 0.0 {
                return Err(DataError::ZeroNorm {
                    id: self.id.clone(),
                    tensor: f.name(),
                });
            }
        }
        Ok(())
    }
}

/// Train/validation/test id lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" | "validation" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Checks the lists are disjoint and together cover exactly `ids`.
    pub fn validate<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<(), DataError> {
        let mut seen = std::collections::BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(DataError::Splits(format!("id {id} appears in more than one split")));
            }
        }
        let all: std::collections::BTreeSet<&str> = ids.into_iter().collect();
        if all != seen {
            let missing = all.difference(&seen).next();
            let extra = seen.difference(&all).next();
            return Err(DataError::Splits(match (missing, extra) {
                (Some(m), _) => format!("id {m} is not assigned to any split"),
                (_, Some(e)) => format!("split id {e} is not a sample"),
                _ => unreachable!(),
            }));
        }
        Ok(())
    }
}

/// A validated, immutable dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dims: DataDims,
    pub samples: Vec<EmbeddingBundle>,
    pub splits: Splits,
    pub split_seed: u64,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), DataError> {
        self.dims.validate()?;
        for s in &self.samples {
            s.validate(&self.dims)?;
        }
        self.splits.validate(self.samples.iter().map(|s| s.id.as_str()))
    }

    /// Indices into `samples` for the named split.
    pub fn split_indices(&self, name: &str) -> Option<Vec<usize>> {
        let ids = self.splits.get(name)?;
        let index: std::collections::BTreeMap<&str, usize> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        ids.iter().map(|id| index.get(id.as_str()).copied()).collect()
    }
}

/// Samples stacked along a leading batch axis.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, m, d]`
    pub text: Tensor,
    /// `[B, n, d]`
    pub image: Tensor,
    /// `[B, z, d]`
    pub caption: Tensor,
    /// `[B, u, d]`
    pub evidence: Tensor,
    /// `[B, d_c]`
    pub clip_text: Tensor,
    /// `[B, d_c]`
    pub clip_image: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: &[&EmbeddingBundle]) -> crate::Result<Self> {
        let stack = |f: Field| -> crate::Result<Tensor> {
            let parts: Vec<&Tensor> = samples.iter().map(|s| s.field(f)).collect();
            Ok(Tensor::stack(&parts)?)
        };
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            text: stack(Field::Text)?,
            image: stack(Field::Image)?,
            caption: stack(Field::Caption)?,
            evidence: stack(Field::Evidence)?,
            clip_text: stack(Field::ClipText)?,
            clip_image: stack(Field::ClipImage)?,
            labels: samples.iter().map(|s| s.label.index()).collect(),
        })
    }

    pub fn from_indices(dataset: &Dataset, indices: &[usize]) -> crate::Result<Self> {
        let refs: Vec<&EmbeddingBundle> = indices.iter().map(|&i| &dataset.samples[i]).collect();
        Self::from_samples(&refs)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
