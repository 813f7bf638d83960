//! The training loop and split evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::TrainConfig;
use super::history::{EpochRecord, History, StepRecord};
use super::metrics::Metrics;
use crate::data::{Batch, Dataset};
use crate::model::{predict, ForwardOptions, Ken};
use crate::optim::Adam;
use crate::params::{complete_gradients, Ctx, ModelParams};
use crate::rng::{stream, Stream, StreamState};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Model outputs over one split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// Sample-weighted mean of the total loss.
    pub loss: f64,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    /// `[N, 2]` class probabilities.
    pub probs: Tensor,
    /// `[N, d_F]` classification features.
    pub features: Tensor,
}

/// Evaluates in inference mode (no dropout) over `indices`, in order.
pub fn evaluate_indices(
    model: &Ken,
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    opts: ForwardOptions,
    batch_size: usize,
) -> Result<Evaluation> {
    let mut ids = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    let mut probs = Vec::with_capacity(2 * indices.len());
    let mut features = Vec::new();
    let mut loss_sum = 0.0;
    let mut d_f = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = Batch::from_indices(dataset, chunk)?;
        let mut cx = Ctx::eval(params);
        let out = model.forward(&mut cx, &batch, opts)?;
        loss_sum += cx.graph.value(out.loss).item() * batch.len() as f64;
        probs.extend_from_slice(cx.graph.value(out.balanced.probs).data());
        let f = cx.graph.value(out.balanced.features);
        d_f = f.last_dim();
        features.extend_from_slice(f.data());
        ids.extend(batch.ids);
        labels.extend(batch.labels);
    }
    if ids.is_empty() {
        return Err(Error::EmptySplit("requested".into()));
    }
    let n = ids.len();
    let probs = Tensor::new(vec![n, 2], probs)?;
    let predictions = predict(&probs);
    Ok(Evaluation {
        metrics: Metrics::from_predictions(&labels, &predictions),
        loss: loss_sum / n as f64,
        ids,
        labels,
        predictions,
        probs,
        features: Tensor::new(vec![n, d_f], features)?,
    })
}

/// Evaluates a named split.
pub fn evaluate(model: &Ken, params: &ModelParams, dataset: &Dataset, split: &str, config: &TrainConfig) -> Result<Evaluation> {
    let indices = dataset
        .split_indices(split)
        .ok_or_else(|| Error::Config(format!("unknown split {split:?}")))?;
    if indices.is_empty() {
        return Err(Error::EmptySplit(split.into()));
    }
    evaluate_indices(
        model,
        params,
        dataset,
        &indices,
        config.forward_options(),
        config.training.batch_size,
    )
}

pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best: Checkpoint,
    pub last: Checkpoint,
    /// Where the history and checkpoints were written, if anywhere.
    pub out_dir: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn model(&self) -> Result<Ken> {
        self.last.model()
    }
}

/// Loads the configured dataset and trains, writing into `out_dir`.
pub fn train(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let dataset = config.load_dataset()?;
    train_with(config, &dataset, Some(out_dir))
}

/// Trains for the full epoch budget. With `out_dir`, writes `epochs.csv`,
/// `steps.csv` and the `checkpoints/best` and `checkpoints/final` directories.
pub fn train_with(config: &TrainConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = config.model.dims(dataset.dims);
    let model = Ken::new(dims, config.ablation)?;
    let t = &config.training;
    let opts = config.forward_options();
    let train_idx = dataset.split_indices("train").expect("train split exists");
    if train_idx.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let val_idx = dataset.split_indices("val").expect("val split exists");

    let mut params = model.init_params(t.seed);
    let mut adam = Adam::new(config.optimizer);
    let mut shuffle = stream(t.seed, Stream::Shuffle);
    let mut dropout = stream(t.seed, Stream::Dropout);
    let mut history = out_dir.map(History::create).transpose()?;
    let mut records = Vec::with_capacity(t.epochs);

    let snapshot = |kind, epoch, val_accuracy, params: &ModelParams, adam: &Adam, shuffle: &ChaCha8Rng, dropout: &ChaCha8Rng| Checkpoint {
        kind,
        epoch,
        val_accuracy,
        config: config.clone(),
        dims,
        optimizer_steps: adam.steps(),
        rng: vec![
            StreamState::capture(t.seed, Stream::Shuffle, shuffle),
            StreamState::capture(t.seed, Stream::Dropout, dropout),
        ],
        params: params.clone(),
    };
    let mut best = snapshot(CheckpointKind::Best, 0, None, &params, &adam, &shuffle, &dropout);

    for epoch in 1..=t.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut fnd_sum, mut emo_sum, mut has_emo, mut correct) = (0.0, 0.0, 0.0, false, 0usize);
        for (b, chunk) in order.chunks(t.batch_size).enumerate() {
            let batch = Batch::from_indices(dataset, chunk)?;
            let mut cx = Ctx::train(&params, t.dropout, &mut dropout);
            let out = model.forward(&mut cx, &batch, opts).map_err(|e| match e {
                Error::Tensor(source @ crate::tensor::TensorError::NonFinite { .. }) => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    source,
                },
                e => e,
            })?;
            let n = batch.len() as f64;
            let loss = cx.graph.value(out.loss).item();
            let l_fnd = cx.graph.value(out.l_fnd).item();
            let l_emo = out.l_emo.map(|v| cx.graph.value(v).item());
            let preds = predict(cx.graph.value(out.balanced.probs));
            correct += preds.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
            loss_sum += loss * n;
            fnd_sum += l_fnd * n;
            if let Some(e) = l_emo {
                emo_sum += e * n;
                has_emo = true;
            }
            let mut grads = cx.into_gradients(out.loss)?;
            complete_gradients(&params, &mut grads);
            adam.step(&mut params, &grads)?;
            if let Some(h) = history.as_mut() {
                h.append_step(&StepRecord {
                    epoch,
                    batch: b,
                    step: adam.steps(),
                    samples: batch.len(),
                    loss,
                    l_fnd,
                    l_emo,
                })?;
            }
        }
        let n = train_idx.len() as f64;
        let val = if val_idx.is_empty() {
            None
        } else {
            Some(evaluate_indices(&model, &params, dataset, &val_idx, opts, t.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            l_fnd: fnd_sum / n,
            l_emo: has_emo.then(|| emo_sum / n),
            train_accuracy: correct as f64 / n,
            val_loss: val.as_ref().map(|v| v.loss),
            val: val.as_ref().map(|v| v.metrics),
        };
        if let Some(h) = history.as_mut() {
            h.append_epoch(&record)?;
        }
        let val_acc = val.as_ref().map(|v| v.metrics.accuracy);
        let improved = match (val_acc, best.val_accuracy) {
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => true,
            // without a validation split the latest epoch is the best one
            (None, _) => true,
        };
        if improved {
            best = snapshot(CheckpointKind::Best, epoch, val_acc, &params, &adam, &shuffle, &dropout);
        }
        records.push(record);
    }
    let last_val = records.last().and_then(|r| r.val.map(|m| m.accuracy));
    let last = snapshot(CheckpointKind::Final, t.epochs, last_val, &params, &adam, &shuffle, &dropout);
    if let Some(dir) = out_dir {
        best.write(&dir.join("checkpoints").join(CheckpointKind::Best.dir_name()))?;
        last.write(&dir.join("checkpoints").join(CheckpointKind::Final.dir_name()))?;
    }
    Ok(TrainOutcome {
        history: records,
        best,
        last,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}
