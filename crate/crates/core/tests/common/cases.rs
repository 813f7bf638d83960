//! Seeded check cases shared by the focused test files and the acceptance
//! suite. Each returns a measurement or a description of the violation.

use rand::Rng;

use ken_core::balanced::{aggregate, total_loss, BalancedDims, BalancedLearning, Routing};
use ken_core::data::Batch;
use ken_core::emotion::{aggregate_experts, combine_emotions, emotion_reasoning_loss, EmotionAnalysis, EmotionDims, EmotionExpert, ExpertDims};
use ken_core::knowledge::{fuse_perspectives, similarity_gate, CoAttentionBlock, CoAttentionEncoder, KnowledgeAugment, KnowledgeDims, KnowledgeInputs};
use ken_core::model::{Ablation, FeaturePack, ForwardOptions, Ken, ModelDims};
use ken_core::nn::{FeedForward, Linear};
use ken_core::params::{Ctx, ModelParams};
use ken_core::rng::{stream, Stream};
use ken_core::tensor::{Tensor, Var};

use super::oracle::{self, Mat};
use super::{grad_check, grad_check_sampled, jitter, probe, rand_tensor, rng, small_model_dims, GradReport, Mode};

fn init(seed: u64, f: impl FnOnce(&mut ModelParams, &mut rand_chacha::ChaCha8Rng)) -> ModelParams {
    let mut p = ModelParams::new();
    f(&mut p, &mut stream(seed, Stream::Init));
    jitter(&mut p, seed, 0.1);
    p
}

fn train_mode(seed: u64) -> Mode {
    Mode::Train { rate: 0.25, seed }
}

/// Random batch at the given dims.
pub fn random_batch(seed: u64, batch: usize, d: usize, d_c: usize, lens: [usize; 4]) -> Batch {
    let mut r = rng(seed);
    let [m, n, z, u] = lens;
    Batch {
        ids: (0..batch).map(|i| format!("r{i}")).collect(),
        text: rand_tensor(&mut r, &[batch, m, d], 1.0),
        image: rand_tensor(&mut r, &[batch, n, d], 1.0),
        caption: rand_tensor(&mut r, &[batch, z, d], 1.0),
        evidence: rand_tensor(&mut r, &[batch, u, d], 1.0),
        clip_text: rand_tensor(&mut r, &[batch, d_c], 1.0),
        clip_image: rand_tensor(&mut r, &[batch, d_c], 1.0),
        labels: (0..batch).map(|_| r.random_range(0..2)).collect(),
    }
}

fn small_batch(seed: u64) -> Batch {
    let dims = small_model_dims();
    random_batch(seed, 2, dims.d, dims.d_c, [4; 4])
}

// ---------------------------------------------------------------- gradients

pub fn grad_encoder(seed: u64) -> GradReport {
    let enc = CoAttentionEncoder::new("enc", 8, 2).unwrap();
    let params = init(seed, |p, r| enc.init(p, r));
    let mut r = rng(seed);
    let (q, kv) = (rand_tensor(&mut r, &[2, 4, 8], 1.0), rand_tensor(&mut r, &[2, 3, 8], 1.0));
    grad_check(&params, train_mode(seed), |cx| {
        let (q, kv) = (cx.constant(q.clone()).unwrap(), cx.constant(kv.clone()).unwrap());
        let out = enc.forward(cx, q, kv).unwrap();
        probe(cx, out, seed)
    })
}

pub fn grad_coattention_block(seed: u64) -> GradReport {
    let block = CoAttentionBlock::new("blk", 8, 2, 2).unwrap();
    let params = init(seed, |p, r| block.init(p, r));
    let mut r = rng(seed);
    let (a, b) = (rand_tensor(&mut r, &[2, 4, 8], 1.0), rand_tensor(&mut r, &[2, 4, 8], 1.0));
    grad_check(&params, Mode::Eval, |cx| {
        let (a, b) = (cx.constant(a.clone()).unwrap(), cx.constant(b.clone()).unwrap());
        let (x, y) = block.forward(cx, a, b).unwrap();
        let both = cx.graph.concat(&[x, y]).unwrap();
        probe(cx, both, seed)
    })
}

pub fn grad_expert(seed: u64) -> GradReport {
    let e = EmotionExpert::new(
        "x",
        ExpertDims {
            d: 8,
            d_e: 4,
            d_e_out: 4,
            heads: 1,
        },
    )
    .unwrap();
    let params = init(seed, |p, r| e.init(p, r));
    let seq = rand_tensor(&mut rng(seed), &[2, 4, 8], 1.0);
    grad_check(&params, train_mode(seed), |cx| {
        let s = cx.constant(seq.clone()).unwrap();
        let out = e.forward(cx, s).unwrap();
        probe(cx, out, seed)
    })
}

fn knowledge(seed: u64) -> (KnowledgeAugment, ModelParams) {
    let d = small_model_dims();
    let ka = KnowledgeAugment::new(KnowledgeDims {
        d: d.d,
        d_c: d.d_c,
        d_s: d.d_s,
        heads: d.heads,
        depth: d.depth,
    })
    .unwrap();
    let params = init(seed, |p, r| ka.init(p, r));
    (ka, params)
}

fn knowledge_inputs(cx: &mut Ctx, b: &Batch) -> KnowledgeInputs {
    KnowledgeInputs {
        text: cx.constant(b.text.clone()).unwrap(),
        image: cx.constant(b.image.clone()).unwrap(),
        caption: cx.constant(b.caption.clone()).unwrap(),
        evidence: cx.constant(b.evidence.clone()).unwrap(),
        clip_text: cx.constant(b.clip_text.clone()).unwrap(),
        clip_image: cx.constant(b.clip_image.clone()).unwrap(),
        theta: similarity_gate(&b.clip_text, &b.clip_image),
    }
}

/// Perspective, fusion and unimodal feed-forwards through the whole
/// knowledge stage.
pub fn grad_knowledge(seed: u64) -> GradReport {
    let (ka, params) = knowledge(seed);
    let batch = small_batch(seed);
    grad_check(&params, Mode::Eval, |cx| {
        let x = knowledge_inputs(cx, &batch);
        let out = ka.forward(cx, &x, &Ablation::none()).unwrap();
        let all = cx.graph.concat(&[out.m_f, out.m_t, out.m_v]).unwrap();
        probe(cx, all, seed)
    })
}

fn balanced(seed: u64) -> (BalancedLearning, ModelParams) {
    let d = small_model_dims();
    let bl = BalancedLearning::new(BalancedDims {
        d_m: d.d_m(),
        d_e_out: d.d_e_out,
        d_f: d.d_f,
        domains: d.domains,
    })
    .unwrap();
    let params = init(seed, |p, r| bl.init(p, r));
    (bl, params)
}

pub fn grad_gate(seed: u64) -> GradReport {
    let (bl, params) = balanced(seed);
    let m_e = rand_tensor(&mut rng(seed), &[3, small_model_dims().d_e_out], 2.0);
    grad_check(&params, Mode::Eval, |cx| {
        let x = cx.constant(m_e.clone()).unwrap();
        let a = bl.gate_weights(cx, x).unwrap();
        probe(cx, a, seed)
    })
}

pub fn grad_processors(seed: u64) -> GradReport {
    let (bl, params) = balanced(seed);
    let dims = small_model_dims();
    let mut r = rng(seed);
    let m = rand_tensor(&mut r, &[3, dims.d_m()], 1.0);
    let m_e = rand_tensor(&mut r, &[3, dims.d_e_out], 1.0);
    grad_check(&params, Mode::Eval, |cx| {
        let m = cx.constant(m.clone()).unwrap();
        let me = cx.constant(m_e.clone()).unwrap();
        let outs = bl.run_processors(cx, m).unwrap();
        let a = bl.gate_weights(cx, me).unwrap();
        let f = aggregate(cx, a, &outs).unwrap();
        probe(cx, f, seed)
    })
}

pub fn grad_classification_loss(seed: u64) -> GradReport {
    let (bl, params) = balanced(seed);
    let dims = small_model_dims();
    let mut r = rng(seed);
    let m = rand_tensor(&mut r, &[4, dims.d_m()], 1.0);
    let m_e = rand_tensor(&mut r, &[4, dims.d_e_out], 1.0);
    let labels: Vec<usize> = (0..4).map(|i| i % 2).collect();
    grad_check(&params, Mode::Eval, |cx| {
        let m = cx.constant(m.clone()).unwrap();
        let me = cx.constant(m_e.clone()).unwrap();
        bl.forward(cx, m, me, &labels, Routing::Gated).unwrap().loss
    })
}

fn emotion(seed: u64) -> (EmotionAnalysis, ModelParams) {
    let d = small_model_dims();
    let em = EmotionAnalysis::new(EmotionDims {
        d: d.d,
        d_e: d.d_e,
        d_e_out: d.d_e_out,
        heads: d.expert_heads,
        experts: d.experts,
    })
    .unwrap();
    let params = init(seed, |p, r| em.init(p, r));
    (em, params)
}

pub fn grad_emotion_loss(seed: u64) -> GradReport {
    let (em, params) = emotion(seed);
    let m_e = rand_tensor(&mut rng(seed), &[4, small_model_dims().d_e_out], 2.0);
    let labels = [0, 1, 1, 0];
    grad_check(&params, Mode::Eval, |cx| {
        let x = cx.constant(m_e.clone()).unwrap();
        emotion_reasoning_loss(cx, x, &labels, &em.head).unwrap().1
    })
}

/// Experts, averaging, the γ mix and the emotion loss together.
pub fn grad_emotion_stage(seed: u64) -> GradReport {
    let (em, params) = emotion(seed);
    let batch = small_batch(seed);
    grad_check(&params, train_mode(seed), |cx| {
        let t = cx.constant(batch.text.clone()).unwrap();
        let v = cx.constant(batch.image.clone()).unwrap();
        let out = em.forward(cx, t, v, &batch.labels, 0.7).unwrap();
        let p = probe(cx, out.m_e, seed);
        cx.graph.add(p, out.loss).unwrap()
    })
}

/// End to end in training mode. The components above cover every
/// coordinate; here a sample per tensor keeps the run short.
pub fn grad_full_model(seed: u64) -> GradReport {
    let model = Ken::new(small_model_dims(), Ablation::none()).unwrap();
    let mut params = model.init_params(seed);
    jitter(&mut params, seed, 0.1);
    let batch = small_batch(seed);
    grad_check_sampled(&params, train_mode(seed), Some(8), |cx| {
        model.forward(cx, &batch, ForwardOptions::default()).unwrap().loss
    })
}

pub type GradCase = (&'static str, fn(u64) -> GradReport);

pub const GRAD_CASES: [GradCase; 10] = [
    ("co-attention encoder", grad_encoder),
    ("co-attention block", grad_coattention_block),
    ("emotion expert", grad_expert),
    ("knowledge stage", grad_knowledge),
    ("gate", grad_gate),
    ("processors", grad_processors),
    ("classification loss", grad_classification_loss),
    ("emotion loss", grad_emotion_loss),
    ("emotion stage", grad_emotion_stage),
    ("full model", grad_full_model),
];

// ------------------------------------------------------------------ oracles

/// Co-attention block against the reference, random lengths, heads and depth.
pub fn oracle_coattention(seed: u64) -> f64 {
    let mut r = rng(seed);
    let heads = [1, 2, 4][r.random_range(0..3)];
    let depth = r.random_range(1..=2);
    let (b, la, lb) = (r.random_range(1..=3), r.random_range(1..=5), r.random_range(1..=5));
    let block = CoAttentionBlock::new("blk", 8, heads, depth).unwrap();
    let params = init(seed, |p, r| block.init(p, r));
    let (ta, tb) = (rand_tensor(&mut r, &[b, la, 8], 1.5), rand_tensor(&mut r, &[b, lb, 8], 1.5));
    let mut cx = Ctx::eval(&params);
    let (va, vb) = (cx.constant(ta.clone()).unwrap(), cx.constant(tb.clone()).unwrap());
    let (oa, ob) = block.forward(&mut cx, va, vb).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..b {
        let (ra, rb) = oracle::block(&params, "blk", &Mat::sample(&ta, s), &Mat::sample(&tb, s), heads, depth);
        worst = worst.max(oracle::max_diff(&ra, Mat::sample(cx.graph.value(oa), s).data.as_slice()));
        worst = worst.max(oracle::max_diff(&rb, Mat::sample(cx.graph.value(ob), s).data.as_slice()));
    }
    worst
}

/// One expert against the hand-unrolled LSTM recurrence (d = 2, d_e = 2, length 3).
pub fn oracle_expert(seed: u64) -> f64 {
    let e = EmotionExpert::new(
        "x",
        ExpertDims {
            d: 2,
            d_e: 2,
            d_e_out: 3,
            heads: 1,
        },
    )
    .unwrap();
    let params = init(seed, |p, r| e.init(p, r));
    let seq = rand_tensor(&mut rng(seed), &[2, 3, 2], 1.5);
    let mut cx = Ctx::eval(&params);
    let s = cx.constant(seq.clone()).unwrap();
    let out = e.forward(&mut cx, s).unwrap();
    (0..2)
        .map(|b| {
            let want = oracle::expert(&params, "x", &Mat::sample(&seq, b), 1);
            oracle::max_diff(&want, cx.graph.value(out).row(b))
        })
        .fold(0.0, f64::max)
}

/// Per-stage worst deviation of the full model's stages from the
/// reference, on a random batch with random γ.
pub fn oracle_model(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut dims: ModelDims = small_model_dims();
    dims.depth = r.random_range(1..=2);
    let gamma = r.random_range(0.0..1.0);
    let b = r.random_range(1..=3);
    let lens = [0; 4].map(|_| r.random_range(1..=5));
    let model = Ken::new(dims, Ablation::none()).unwrap();
    let mut params = model.init_params(seed);
    jitter(&mut params, seed, 0.1);
    let batch = random_batch(seed + 1000, b, dims.d, dims.d_c, lens);
    let mut cx = Ctx::eval(&params);
    let out = model.forward(&mut cx, &batch, ForwardOptions { gamma, lambda: 0.2 }).unwrap();
    let pack: FeaturePack = out.features(&cx.graph);
    let mut worst = [
        ("perspectives", 0.0f64),
        ("fusion", 0.0),
        ("unimodal", 0.0),
        ("expert averaging", 0.0),
        ("emotion mix", 0.0),
        ("processors", 0.0),
        ("gate and aggregate", 0.0),
    ];
    let mut note = |slot: usize, want: &Mat, stage: &str, s: usize| {
        let got = pack[stage].row(s);
        worst[slot].1 = worst[slot].1.max(oracle::max_diff(want, got));
    };
    let p = &params;
    for s in 0..b {
        let t = Mat::sample(&batch.text, s);
        let v = Mat::sample(&batch.image, s);
        let c = Mat::sample(&batch.caption, s);
        let e = Mat::sample(&batch.evidence, s);
        let ct = Mat::sample(&batch.clip_text, s);
        let cv = Mat::sample(&batch.clip_image, s);
        let (tt, ee) = oracle::block(p, "ka.text_evidence", &t, &e, dims.heads, dims.depth);
        let (vv, cc) = oracle::block(p, "ka.image_caption", &v, &c, dims.heads, dims.depth);
        let s1 = oracle::perspective(p, "ka.s1", &tt, &ee);
        let s2 = oracle::perspective(p, "ka.s2", &vv, &cc);
        let s3 = oracle::ffn(p, "ka.s3", &Mat::hcat(&[&ct, &cv]));
        note(0, &s1, "s1", s);
        note(0, &s2, "s2", s);
        note(0, &s3, "s3", s);
        let theta = oracle::cosine_gate(&ct.data, &cv.data);
        note(1, &Mat::row_vec(&[theta]), "theta", s);
        let m_f = oracle::fuse(p, &s1, &s2, &s3, theta);
        note(1, &m_f, "m_f", s);
        let m_t = oracle::ffn(p, "ka.text", &Mat::hcat(&[&ct, &t.mean_rows()]));
        let m_v = oracle::ffn(p, "ka.image", &Mat::hcat(&[&cv, &v.mean_rows()]));
        note(2, &m_t, "m_t", s);
        note(2, &m_v, "m_v", s);
        let experts = |modality: &str, seq: &Mat| -> Mat {
            let outs: Vec<Mat> = (0..dims.experts)
                .map(|k| oracle::expert(p, &format!("emo.{modality}.{k}"), seq, dims.expert_heads))
                .collect();
            oracle::mean_of(&outs)
        };
        let e_t = experts("text", &t);
        let e_v = experts("image", &v);
        note(3, &e_t, "e_t", s);
        note(3, &e_v, "e_v", s);
        let m_e = oracle::combine(p, &e_t, &e_v, gamma);
        note(4, &m_e, "m_e", s);
        let m = Mat::hcat(&[&m_t, &m_v, &m_e, &m_f]);
        let procs = oracle::processors(p, &m, dims.domains);
        for (j, pj) in procs.iter().enumerate() {
            note(5, pj, &format!("proc.{j}"), s);
        }
        let a = oracle::gate(p, &m_e);
        note(6, &a, "a", s);
        note(6, &oracle::aggregate(&a, &procs), "f", s);
    }
    worst.to_vec()
}

// --------------------------------------------------------------- invariants

pub type Check = Result<(), String>;

fn row_sums_ok(t: &Tensor, what: &str) -> Check {
    let n = t.last_dim();
    for (i, row) in t.data().chunks(n).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
            return Err(format!("{what} row {i} sums to {s}"));
        }
    }
    Ok(())
}

/// Co-attention, expert self-attention and gate rows are distributions,
/// also for large-magnitude inputs.
pub fn attention_rows(seed: u64, scale: f64) -> Check {
    let mut r = rng(seed);
    let enc = CoAttentionEncoder::new("enc", 8, 4).unwrap();
    let expert = EmotionExpert::new(
        "x",
        ExpertDims {
            d: 8,
            d_e: 4,
            d_e_out: 4,
            heads: 2,
        },
    )
    .unwrap();
    let (bl, _) = balanced(seed);
    let mut p = init(seed, |p, r| {
        enc.init(p, r);
        expert.init(p, r);
        bl.init(p, r);
    });
    jitter(&mut p, seed + 1, 1.0);
    let q = rand_tensor(&mut r, &[2, 3, 8], scale);
    let kv = rand_tensor(&mut r, &[2, 5, 8], scale);
    let me = rand_tensor(&mut r, &[4, 4], scale);
    let mut cx = Ctx::eval(&p);
    let (q, kv, me) = (cx.constant(q).unwrap(), cx.constant(kv).unwrap(), cx.constant(me).unwrap());
    let co = enc.forward_full(&mut cx, q, kv).unwrap();
    let ex = expert.forward_full(&mut cx, kv).unwrap();
    let a = bl.gate_weights(&mut cx, me).unwrap();
    for v in co.attention.iter().chain(&ex.attention) {
        row_sums_ok(cx.graph.value(*v), "attention")?;
    }
    row_sums_ok(cx.graph.value(a), "gate")
}

/// θ stays in [0, 1]; the fused feature vanishes at θ = 0 and is linear in θ.
pub fn theta_scaling(seed: u64, theta: f64) -> Check {
    let mut r = rng(seed);
    let clip_t = rand_tensor(&mut r, &[6, 5], 3.0);
    let clip_v = rand_tensor(&mut r, &[6, 5], 3.0);
    for (i, th) in similarity_gate(&clip_t, &clip_v).into_iter().enumerate() {
        if !(0.0..=1.0).contains(&th) {
            return Err(format!("theta {th} out of range at row {i}"));
        }
    }
    let sigma = FeedForward::new("ka.fuse", 9, 4);
    let p = init(seed, |p, r| sigma.init(p, r));
    let s: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut r, &[2, 3], 1.0)).collect();
    let run = |th: f64| -> Tensor {
        let mut cx = Ctx::eval(&p);
        let vs: Vec<Var> = s.iter().map(|t| cx.constant(t.clone()).unwrap()).collect();
        let out = fuse_perspectives(&mut cx, [vs[0], vs[1], vs[2]], &[th, th], &sigma).unwrap();
        cx.graph.value(out).clone()
    };
    let zero = run(0.0);
    if zero.data().iter().any(|&v| v != 0.0) {
        return Err("M_f is not zero at theta = 0".into());
    }
    let (full, part) = (run(1.0), run(theta));
    let ratio = part.l2_norm() / full.l2_norm();
    if (ratio - theta).abs() > 1e-12 {
        return Err(format!("|M_f(theta)| / |M_f(1)| = {ratio}, theta = {theta}"));
    }
    Ok(())
}

/// At γ = 1 the image sequence has no effect on M_e, bit for bit, and at
/// γ = 0 the text sequence has none.
pub fn gamma_endpoints(seed: u64) -> Check {
    let (em, p) = emotion(seed);
    let mut r = rng(seed);
    let d = small_model_dims();
    let t1 = rand_tensor(&mut r, &[2, 4, d.d], 1.0);
    let t2 = rand_tensor(&mut r, &[2, 4, d.d], 1.0);
    let m_e = |t: &Tensor, v: &Tensor, gamma: f64| -> Vec<u64> {
        let mut cx = Ctx::eval(&p);
        let (t, v) = (cx.constant(t.clone()).unwrap(), cx.constant(v.clone()).unwrap());
        let out = em.forward(&mut cx, t, v, &[0, 1], gamma).unwrap();
        cx.graph.value(out.m_e).data().iter().map(|x| x.to_bits()).collect()
    };
    if m_e(&t1, &t1, 1.0) != m_e(&t1, &t2, 1.0) {
        return Err("gamma = 1 output depends on the image".into());
    }
    if m_e(&t1, &t1, 0.0) != m_e(&t2, &t1, 0.0) {
        return Err("gamma = 0 output depends on the text".into());
    }
    if m_e(&t1, &t1, 0.5) == m_e(&t1, &t2, 0.5) {
        return Err("gamma = 0.5 output ignores the image".into());
    }
    let sigma = FeedForward::new("emo.combine", 8, 4);
    let p2 = init(seed, |p, r| sigma.init(p, r));
    let direct = |ev: &Tensor| -> Vec<u64> {
        let mut cx = Ctx::eval(&p2);
        let et = cx.constant(Tensor::full(&[1, 4], 0.3)).unwrap();
        let ev = cx.constant(ev.clone()).unwrap();
        let out = combine_emotions(&mut cx, et, ev, 1.0, &sigma).unwrap();
        cx.graph.value(out).data().iter().map(|x| x.to_bits()).collect()
    };
    if direct(&rand_tensor(&mut r, &[1, 4], 5.0)) != direct(&rand_tensor(&mut r, &[1, 4], 5.0)) {
        return Err("combine at gamma = 1 depends on e_v".into());
    }
    Ok(())
}

/// Averaging k expert outputs does not depend on their order.
pub fn expert_permutation(seed: u64, k: usize) -> Check {
    let mut r = rng(seed);
    let outs: Vec<Tensor> = (0..k).map(|_| rand_tensor(&mut r, &[3, 4], 2.0)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
    let p = ModelParams::new();
    let mut cx = Ctx::eval(&p);
    let vs: Vec<Var> = outs.iter().map(|t| cx.constant(t.clone()).unwrap()).collect();
    let permuted: Vec<Var> = order.iter().map(|&i| vs[i]).collect();
    let a = aggregate_experts(&mut cx, &vs).unwrap();
    let b = aggregate_experts(&mut cx, &permuted).unwrap();
    let diff = cx.graph.value(a).max_abs_diff(cx.graph.value(b));
    // reassociating a k-term float sum moves the result by a few ulps at most
    if diff > 1e-15 * k as f64 * 2.0 {
        return Err(format!("permuted mean differs by {diff}"));
    }
    let same = vec![vs[0]; k];
    let m = aggregate_experts(&mut cx, &same).unwrap();
    if cx.graph.value(m).max_abs_diff(&outs[0]) > 1e-15 * 2.0 {
        return Err("mean of identical outputs differs from them".into());
    }
    Ok(())
}

/// Random gate weights keep F inside the processor outputs' hull, and a
/// one-hot gate returns the selected output exactly.
pub fn convex_aggregation(seed: u64, x: usize, hot: usize) -> Check {
    let mut r = rng(seed);
    let ms: Vec<Tensor> = (0..x).map(|_| rand_tensor(&mut r, &[3, 5], 4.0)).collect();
    let logits = rand_tensor(&mut r, &[3, x], 6.0);
    let p = ModelParams::new();
    let mut cx = Ctx::eval(&p);
    let vs: Vec<Var> = ms.iter().map(|t| cx.constant(t.clone()).unwrap()).collect();
    let l = cx.constant(logits).unwrap();
    let a = cx.graph.softmax_rows(l).unwrap();
    let f = aggregate(&mut cx, a, &vs).unwrap();
    let fv = cx.graph.value(f);
    for (i, &v) in fv.data().iter().enumerate() {
        let lo = ms.iter().map(|m| m.data()[i]).fold(f64::INFINITY, f64::min);
        let hi = ms.iter().map(|m| m.data()[i]).fold(f64::NEG_INFINITY, f64::max);
        if v < lo - 1e-12 || v > hi + 1e-12 {
            return Err(format!("F[{i}] = {v} outside [{lo}, {hi}]"));
        }
    }
    let hot = hot % x;
    let one_hot: Vec<f64> = (0..3 * x).map(|i| if i % x == hot { 1.0 } else { 0.0 }).collect();
    let oh = cx.constant(Tensor::new(vec![3, x], one_hot).unwrap()).unwrap();
    let sel = aggregate(&mut cx, oh, &vs).unwrap();
    if cx.graph.value(sel) != &ms[hot] {
        return Err(format!("one-hot gate at {hot} does not return m_{hot} exactly"));
    }
    Ok(())
}

// ------------------------------------------------------------ loss arithmetic

/// Loss of a uniform prediction for each head: zero classifier and emotion
/// head weights give `ln 2` for both.
pub fn uniform_losses(seed: u64) -> (f64, f64) {
    let model = Ken::new(small_model_dims(), Ablation::none()).unwrap();
    let mut params = model.init_params(seed);
    for path in ["bl.classifier.w", "bl.classifier.b", "emo.head.w", "emo.head.b"] {
        let t = params.get_mut(path).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let batch = small_batch(seed);
    let mut cx = Ctx::eval(&params);
    let out = model.forward(&mut cx, &batch, ForwardOptions::default()).unwrap();
    let l_emo = out.l_emo.expect("emotion loss present");
    (cx.graph.value(out.l_fnd).item(), cx.graph.value(l_emo).item())
}

/// `(L, L_fnd)` bit patterns of the full model at λ = 0.
pub fn lambda_zero(seed: u64) -> (u64, u64) {
    let model = Ken::new(small_model_dims(), Ablation::none()).unwrap();
    let params = model.init_params(seed);
    let batch = small_batch(seed);
    let mut cx = Ctx::eval(&params);
    let out = model.forward(&mut cx, &batch, ForwardOptions { gamma: 0.7, lambda: 0.0 }).unwrap();
    (cx.graph.value(out.loss).item().to_bits(), cx.graph.value(out.l_fnd).item().to_bits())
}

pub fn composed_loss(l_fnd: f64, l_emo: f64, lambda: f64) -> f64 {
    let p = ModelParams::new();
    let mut cx = Ctx::eval(&p);
    let f = cx.constant(Tensor::scalar(l_fnd)).unwrap();
    let e = cx.constant(Tensor::scalar(l_emo)).unwrap();
    let l = total_loss(&mut cx, f, e, lambda).unwrap();
    cx.graph.value(l).item()
}

/// A head whose logits are equal for every class.
pub fn head_uniform_loss() -> f64 {
    let head = Linear::new("h", 3, 2, true);
    let mut p = ModelParams::new();
    head.init(&mut p, &mut stream(0, Stream::Init));
    *p.get_mut("h.w").unwrap() = Tensor::zeros(&[3, 2]);
    let mut cx = Ctx::eval(&p);
    let x = cx.constant(Tensor::full(&[4, 3], 0.7)).unwrap();
    let (_, loss) = emotion_reasoning_loss(&mut cx, x, &[0, 1, 1, 0], &head).unwrap();
    cx.graph.value(loss).item()
}
