//! Training, evaluation, ablation and sweep runners, plus the on-disk
//! history, checkpoint and feature formats.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod export;
pub mod history;
pub mod metrics;
pub mod stats;
pub mod sweep;
pub mod train;

pub use ablate::{ablate, verify_footprint, AblationRow};
pub use checkpoint::{Checkpoint, CheckpointKind};
pub use config::{DataSource, ModelConfig, TrainConfig, TrainingConfig};
pub use export::{export_features, read_features, FeatureRow};
pub use history::{EpochRecord, History, StepRecord};
pub use metrics::{ClassMetrics, Confusion, Metrics};
pub use stats::{bootstrap_mean_ci, Interval};
pub use sweep::{sweep, SweepParam, SweepRow};
pub use train::{evaluate, evaluate_indices, train, train_with, Evaluation, TrainOutcome};
