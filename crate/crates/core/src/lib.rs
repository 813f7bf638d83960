//! Multimodal fake news detection with knowledge augmentation, expert emotion
//! analysis and emotion-gated balanced learning, on precomputed embeddings.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors and a reverse-mode autodiff tape.
//! * [`params`], [`nn`], [`optim`]: named parameters, small layers and Adam.
//! * [`data`]: embedding bundles, the on-disk blob format, synthetic data and splits.
//! * [`knowledge`], [`emotion`], [`balanced`]: the three model stages.
//! * [`model`]: the assembled network and its ablation switches.
//! * [`harness`]: training, metrics, ablation and sweep runners, feature export.

pub mod balanced;
pub mod data;
pub mod emotion;
mod error;
pub mod harness;
pub mod knowledge;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
