#![allow(dead_code)]

pub mod cases;
pub mod oracle;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ken_core::data::{DataDims, SyntheticSpec};
use ken_core::harness::{DataSource, ModelConfig, TrainConfig};
use ken_core::model::ModelDims;
use ken_core::params::{Ctx, ModelParams};
use ken_core::rng::{stream, Stream};
use ken_core::tensor::{Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Stream::Synth)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// The gradient-check scale: d = 8, sequence lengths 4, k = 2, x = 3.
pub fn small_data_dims() -> DataDims {
    DataDims {
        d: 8,
        d_c: 4,
        m: 4,
        n: 4,
        z: 4,
        u: 4,
    }
}

pub fn small_model_dims() -> ModelDims {
    ModelDims::small(small_data_dims())
}

/// Adds uniform noise to every parameter so biases and norm affines are
/// exercised away from their initial values.
pub fn jitter(params: &mut ModelParams, seed: u64, scale: f64) {
    let mut r = rng(seed ^ 0x5eed);
    let paths: Vec<String> = params.paths().map(String::from).collect();
    for path in paths {
        let t = params.get_mut(&path).unwrap();
        for v in t.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
}

/// `Σ out ∘ R` with a fixed random `R`, so every output element matters.
pub fn probe(cx: &mut Ctx, out: Var, seed: u64) -> Var {
    let n = cx.graph.value(out).numel();
    let mut r = rng(seed ^ 0xabcd);
    let weights: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let weighted = cx.graph.mul_const(out, weights).unwrap();
    cx.graph.sum(weighted).unwrap()
}

pub const FD_EPS: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Eval,
    /// Dropout with a mask replayed from the same seed on every evaluation.
    Train { rate: f64, seed: u64 },
}

fn with_ctx<T>(params: &ModelParams, mode: Mode, f: &dyn Fn(&mut Ctx) -> Var, then: impl FnOnce(Ctx, Var) -> T) -> T {
    let seed = match mode {
        Mode::Train { seed, .. } => seed,
        Mode::Eval => 0,
    };
    let mut drop_rng = stream(seed, Stream::Dropout);
    let mut cx = match mode {
        Mode::Eval => Ctx::eval(params),
        Mode::Train { rate, .. } => Ctx::train(params, rate, &mut drop_rng),
    };
    let loss = f(&mut cx);
    then(cx, loss)
}

fn loss_only(params: &ModelParams, mode: Mode, f: &dyn Fn(&mut Ctx) -> Var) -> f64 {
    with_ctx(params, mode, f, |cx, loss| cx.graph.value(loss).item())
}

/// Compares analytic gradients of every bound parameter with central
/// differences. `|a - n| / max(|a|, |n|, FD_FLOOR)`.
pub fn grad_check(params: &ModelParams, mode: Mode, f: impl Fn(&mut Ctx) -> Var) -> GradReport {
    grad_check_sampled(params, mode, None, f)
}

/// As [`grad_check`], but with `per_tensor` set only that many seeded
/// coordinates of each parameter tensor are perturbed.
pub fn grad_check_sampled(params: &ModelParams, mode: Mode, per_tensor: Option<usize>, f: impl Fn(&mut Ctx) -> Var) -> GradReport {
    let grads = with_ctx(params, mode, &f, |cx, loss| cx.into_gradients(loss).unwrap());
    assert!(!grads.is_empty(), "loss depends on no parameter");
    let mut report = GradReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut work = params.clone();
    let mut pick = rng(0x9a7d);
    for (path, g) in &grads {
        let mut coords: Vec<usize> = (0..g.numel()).collect();
        if let Some(n) = per_tensor.filter(|&n| n < coords.len()) {
            coords.shuffle(&mut pick);
            coords.truncate(n);
        }
        for i in coords {
            let orig = work.get(path).unwrap().data()[i];
            work.get_mut(path).unwrap().data_mut()[i] = orig + FD_EPS;
            let up = loss_only(&work, mode, &f);
            work.get_mut(path).unwrap().data_mut()[i] = orig - FD_EPS;
            let down = loss_only(&work, mode, &f);
            work.get_mut(path).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let analytic = g.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{path}[{i}] analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    report
}

/// 16 well-separated samples, all in the training split.
pub fn overfit_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        name: "overfit".into(),
        samples: 16,
        d: 16,
        d_c: 8,
        m: 4,
        n: 4,
        z: 4,
        u: 4,
        class_separation: 5.0,
        split_ratios: [0.998, 0.001, 0.001],
        ..SyntheticSpec::small(seed)
    }
}

pub fn overfit_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(DataSource::Synthetic(overfit_spec(seed)));
    cfg.model = ModelConfig::synthetic();
    cfg.training.epochs = 200;
    cfg.training.seed = seed;
    cfg
}

/// 1000 samples in five emotion domains whose label rules conflict.
pub fn direction_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        name: "domains".into(),
        samples: 1000,
        d: 16,
        d_c: 8,
        m: 6,
        n: 6,
        z: 6,
        u: 6,
        class_separation: 2.0,
        emotion_clusters: 5,
        seed,
        emotion_strength: Some(2.0),
        cluster_label_correlation: 0.9,
        split_ratios: [0.8, 0.1, 0.1],
        alternate_domain_signs: true,
    }
}

pub fn direction_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(DataSource::Synthetic(direction_spec(seed)));
    cfg.model = ModelConfig::synthetic();
    cfg.training.epochs = 15;
    cfg.training.seed = seed;
    cfg
}

/// A quick configuration for harness plumbing tests.
pub fn tiny_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(DataSource::Synthetic(SyntheticSpec::small(seed)));
    cfg.model = ModelConfig {
        d_s: 8,
        d_e: 4,
        d_e_out: 4,
        d_f: 8,
        heads: 2,
        expert_heads: 1,
        k: 2,
        x: 3,
        depth: 1,
    };
    cfg.training.epochs = 3;
    cfg.training.batch_size = 8;
    cfg.training.seed = seed;
    cfg
}
