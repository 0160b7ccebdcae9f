//! Central finite-difference verification of the analytic gradients.
//!
//! Every evaluation replays the recorded forward plans (fixed top-k sets,
//! dropout mask, stage mask, subsampling window) and pins the fusion inputs
//! to the stream logits recorded at the base point, so the differentiated
//! function honors the gradient-stop contract of the total loss.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::graph::{bind_params, build_batch, gradients_by_name, BatchLosses, PlanMode, VideoPlan};
use super::model::ModelParams;
use crate::autodiff::Tape;
use crate::corpus::{Corpus, VideoRecord, Vocabularies};
use crate::error::Result;
use crate::fusion::FusionMode;
use crate::tfidf::{build_tfidf, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossSelect {
    Semantic,
    Temporal,
    Fusion,
    Total,
}

impl LossSelect {
    pub const ALL: [LossSelect; 4] =
        [LossSelect::Semantic, LossSelect::Temporal, LossSelect::Fusion, LossSelect::Total];

    pub fn name(self) -> &'static str {
        match self {
            LossSelect::Semantic => "L_sh",
            LossSelect::Temporal => "L_th",
            LossSelect::Fusion => "L_f",
            LossSelect::Total => "total",
        }
    }

    fn pick(self, losses: &BatchLosses) -> crate::autodiff::Var {
        match self {
            LossSelect::Semantic => losses.l_sh,
            LossSelect::Temporal => losses.l_th,
            LossSelect::Fusion => losses.l_f,
            LossSelect::Total => losses.total,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    /// ||analytic - numeric||_2 / (||analytic||_2 + ||numeric||_2).
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: &'static str,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
}

/// The small fixed instance every gradient suite runs on:
/// 6-dim features, 4-dim encoding, 5 attributes, 3 tasks, 2 stages,
/// 20 frames, batch of 2.
pub fn canonical_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        iterations: 0,
        stages: 2,
        kernel_len: 3,
        enc_dim: 4,
        hidden_dim: 8,
        fusion: FusionMode::Gated,
        ..TrainConfig::default()
    }
}

pub fn canonical_instance(seed: u64) -> (ModelParams<f64>, Vec<VideoRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabularies::identity(
        vec!["t0".into(), "t1".into(), "t2".into()],
        vec!["SIL".into(), "a1".into(), "a2".into(), "a3".into(), "a4".into(), "a5".into()],
    )
    .unwrap();
    let transcripts: [(usize, Vec<usize>); 6] = [
        (0, vec![1, 2, 3]),
        (1, vec![2, 4, 5]),
        (2, vec![1, 5, 3]),
        (0, vec![1, 3]),
        (1, vec![4, 5]),
        (2, vec![5, 3, 1]),
    ];
    let videos: Vec<VideoRecord> = transcripts
        .iter()
        .enumerate()
        .map(|(i, (task, transcript))| {
            let features =
                Array2::from_shape_fn((6, 20), |_| (rng.random::<f64>() * 2.0 - 1.0) as f32);
            let attributes = transcript
                .iter()
                .flat_map(|&a| vocab.action_to_attrs[a].iter().copied())
                .collect();
            VideoRecord {
                id: format!("v{i}"),
                features,
                task: *task,
                transcript: transcript.clone(),
                attributes,
                frame_labels: None,
            }
        })
        .collect();
    let corpus = Corpus::new(vocab, videos).unwrap();
    let tables = build_tfidf::<f64>(&corpus, DEFAULT_EPS);
    let cfg = canonical_config();
    let model =
        ModelParams::init(corpus.vocab.clone(), tables, &cfg, 6, &mut rng).expect("init");
    (model, corpus.videos)
}

fn l2(m: &Array2<f64>) -> f64 {
    m.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

struct Recorded {
    plans: Vec<VideoPlan<f64>>,
    streams: Vec<(ndarray::Array1<f64>, ndarray::Array1<f64>)>,
}

fn record(model: &ModelParams<f64>, batch: &[&VideoRecord]) -> Result<Recorded> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x9e37_79b9);
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, model);
    let graph = build_batch(&mut tape, &pv, model, batch, PlanMode::Record(&mut rng), None)?;
    Ok(Recorded { plans: graph.plans, streams: graph.streams })
}

fn replay_loss(
    model: &ModelParams<f64>,
    batch: &[&VideoRecord],
    rec: &Recorded,
    select: LossSelect,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, model);
    let graph = build_batch(
        &mut tape,
        &pv,
        model,
        batch,
        PlanMode::Replay(&rec.plans),
        Some(&rec.streams),
    )?;
    Ok(tape.scalar_value(select.pick(&graph.losses)))
}

/// Compare analytic gradients against central finite differences.
pub fn check_gradients(
    model: &ModelParams<f64>,
    batch: &[&VideoRecord],
    select: LossSelect,
    step: f64,
) -> Result<GradCheckReport> {
    let rec = record(model, batch)?;

    // Analytic gradients from the replayed graph (detached fusion inputs).
    let analytic = {
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, model);
        let graph =
            build_batch(&mut tape, &pv, model, batch, PlanMode::Replay(&rec.plans), None)?;
        let grads = tape.backward(select.pick(&graph.losses));
        gradients_by_name(&grads, &pv)
    };

    let mut tensors = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    for name in model.trainable_names() {
        let mut work = model.clone();
        let len = tensor_len(&work, &name);
        let mut numeric = Array2::<f64>::zeros((len, 1));
        for i in 0..len {
            let base = tensor_get(&work, &name, i);
            tensor_set(&mut work, &name, i, base + step);
            let plus = replay_loss(&work, batch, &rec, select)?;
            tensor_set(&mut work, &name, i, base - step);
            let minus = replay_loss(&work, batch, &rec, select)?;
            tensor_set(&mut work, &name, i, base);
            numeric[(i, 0)] = (plus - minus) / (2.0 * step);
        }
        let analytic_flat = match analytic.get(&name) {
            Some(g) => Array2::from_shape_vec((len, 1), g.iter().copied().collect()).unwrap(),
            None => Array2::zeros((len, 1)),
        };
        let diff = &analytic_flat - &numeric;
        let (na, nn) = (l2(&analytic_flat), l2(&numeric));
        let denom = na + nn;
        let rel_err = if denom < 1e-10 { 0.0 } else { l2(&diff) / denom };
        max_rel_err = max_rel_err.max(rel_err);
        tensors.push(TensorCheck { name, rel_err, analytic_norm: na, numeric_norm: nn });
    }
    Ok(GradCheckReport { loss: select.name(), step, tensors, max_rel_err })
}

/// Largest analytic fusion-loss gradient magnitude into any non-fusion
/// parameter; the stop contract demands exactly zero.
pub fn fusion_stop_leak(model: &ModelParams<f64>, batch: &[&VideoRecord]) -> Result<f64> {
    let rec = record(model, batch)?;
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, model);
    let graph = build_batch(&mut tape, &pv, model, batch, PlanMode::Replay(&rec.plans), None)?;
    let grads = tape.backward(graph.losses.l_f);
    let by_name = gradients_by_name(&grads, &pv);
    let mut leak: f64 = 0.0;
    for (name, g) in &by_name {
        if !name.starts_with("fusion.") {
            leak = leak.max(g.iter().fold(0.0f64, |m, &x| m.max(x.abs())));
        }
    }
    Ok(leak)
}

fn tensor_len(model: &ModelParams<f64>, name: &str) -> usize {
    let mut len = 0;
    model.visit_trainable(|n, view| {
        if n == name {
            len = view.len();
        }
    });
    len
}

fn tensor_get(model: &ModelParams<f64>, name: &str, i: usize) -> f64 {
    let mut out = 0.0;
    model.visit_trainable(|n, view| {
        if n == name {
            out = view.get(i);
        }
    });
    out
}

fn tensor_set(model: &mut ModelParams<f64>, name: &str, i: usize, value: f64) {
    model.visit_trainable_mut(|n, mut view| {
        if n == name {
            view.set(i, value);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_gradient_is_the_parameter() {
        // loss = ||p||^2 / 2 -> dloss/dp = p.
        let p0 = Array2::from_shape_vec((3, 1), vec![0.5, -1.25, 2.0]).unwrap();
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(p0.clone());
        let sq = tape.mul(p, p);
        let summed = tape.dot_const(sq, Array2::from_elem((3, 1), 1.0));
        let loss = tape.scale(summed, 0.5);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(p).unwrap(), &p0);
    }

    #[test]
    fn canonical_gradients_match_finite_differences() {
        let (model, videos) = canonical_instance(11);
        let batch: Vec<&VideoRecord> = vec![&videos[0], &videos[2]];
        for select in LossSelect::ALL {
            let report = check_gradients(&model, &batch, select, 1e-4).unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "{}: max rel err {}",
                select.name(),
                report.max_rel_err
            );
        }
    }

    #[test]
    fn fusion_loss_never_leaks_into_streams() {
        let (model, videos) = canonical_instance(12);
        let batch: Vec<&VideoRecord> = vec![&videos[1], &videos[4]];
        assert_eq!(fusion_stop_leak(&model, &batch).unwrap(), 0.0);
    }

    #[test]
    fn zero_input_video_kills_g_weight_gradient() {
        let (model, mut videos) = canonical_instance(13);
        videos[0].features.fill(0.0);
        let batch: Vec<&VideoRecord> = vec![&videos[0]];
        let rec = record(&model, &batch).unwrap();
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, &model);
        let graph =
            build_batch(&mut tape, &pv, &model, &batch, PlanMode::Replay(&rec.plans), None)
                .unwrap();
        let grads = tape.backward(graph.losses.total);
        let by_name = gradients_by_name(&grads, &pv);
        let gw = by_name.get("encoder.g_weight").unwrap();
        assert!(gw.iter().all(|&x| x == 0.0), "zero input implies zero weight gradient");
        let gb = by_name.get("encoder.g_bias").unwrap();
        assert!(gb.iter().any(|&x| x != 0.0), "bias gradient is generally nonzero");
    }

    #[test]
    fn batch_order_does_not_change_losses() {
        let (model, videos) = canonical_instance(14);
        let forward: Vec<&VideoRecord> = vec![&videos[0], &videos[3]];
        let rec = record(&model, &forward).unwrap();
        let a = replay_loss(&model, &forward, &rec, LossSelect::Total).unwrap();
        let swapped: Vec<&VideoRecord> = vec![&videos[3], &videos[0]];
        let rec_swapped = Recorded {
            plans: vec![rec.plans[1].clone(), rec.plans[0].clone()],
            streams: vec![rec.streams[1].clone(), rec.streams[0].clone()],
        };
        let b = replay_loss(&model, &swapped, &rec_swapped, LossSelect::Total).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
}
