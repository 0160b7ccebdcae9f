//! End-to-end training loop.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use super::graph::{bind_params, build_batch, gradients_by_name, PlanMode};
use super::model::{ModelParams, SegStats};
use crate::autodiff::Tape;
use crate::corpus::{Corpus, VideoRecord};
use crate::encoder::encode_eval;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segment::{decodable_sequence, fit_durations, fit_log_priors, uniform_alignment_labels};
use crate::tfidf::{build_tfidf, DEFAULT_EPS};
use crate::util::log_softmax1;

/// One row of the emitted loss curve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LossRow {
    pub iteration: usize,
    pub total: f64,
    pub l_sh: f64,
    pub l_th: f64,
    pub l_f: f64,
}

/// Train the two-stream model on a corpus. Deterministic given `cfg.seed`.
pub fn train<S: Scalar>(corpus: &Corpus, cfg: &TrainConfig) -> Result<(ModelParams<S>, Vec<LossRow>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("cannot train on an empty corpus".into()));
    }
    for tau in 0..corpus.vocab.n_tasks() {
        if !corpus.videos.iter().any(|v| v.task == tau) {
            return Err(Error::Data(format!(
                "task \"{}\" has no training videos",
                corpus.vocab.tasks[tau]
            )));
        }
    }
    let feature_dim = corpus.videos[0].feature_dim();
    if corpus.videos.iter().any(|v| v.feature_dim() != feature_dim) {
        return Err(Error::Data("videos disagree on feature dimension".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tables = build_tfidf::<S>(corpus, S::from_f64_lossy(DEFAULT_EPS));
    let mut model = ModelParams::init(corpus.vocab.clone(), tables, cfg, feature_dim, &mut rng)?;
    let durations = fit_durations(corpus);
    model.seg_stats = SegStats {
        log_prior: fit_log_priors(corpus),
        duration_lambda: durations.lambda,
        has_background: corpus.has_background,
    };

    let mut adam = AdamState::new();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let n = corpus.len();
    let take = cfg.batch_size.min(n);
    for iteration in 0..cfg.iterations {
        let idx = rand::seq::index::sample(&mut rng, n, take).into_vec();
        let batch: Vec<&VideoRecord> = idx.iter().map(|&i| &corpus.videos[i]).collect();
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, &model);
        let graph = build_batch(&mut tape, &pv, &model, &batch, PlanMode::Record(&mut rng), None)?;
        let row = LossRow {
            iteration,
            total: tape.scalar_value(graph.losses.total).to_f64_lossy(),
            l_sh: tape.scalar_value(graph.losses.l_sh).to_f64_lossy(),
            l_th: tape.scalar_value(graph.losses.l_th).to_f64_lossy(),
            l_f: tape.scalar_value(graph.losses.l_f).to_f64_lossy(),
        };
        if !row.total.is_finite() {
            return Err(Error::Data(format!(
                "non-finite loss at iteration {iteration}: sh={} th={} f={}",
                row.l_sh, row.l_th, row.l_f
            )));
        }
        let grads = tape.backward(graph.losses.total);
        let by_name = gradients_by_name(&grads, &pv);
        adam_step(&mut model, &by_name, &mut adam, cfg);
        curve.push(row);
    }

    if model.action_head.is_some() {
        train_action_head(&mut model, corpus)?;
    }
    Ok((model, curve))
}

/// Single-pass auxiliary frame classifier: the head is fit with
/// uniform-alignment pseudo-labels on the frozen encoding (no iterative
/// realignment).
fn train_action_head<S: Scalar>(model: &mut ModelParams<S>, corpus: &Corpus) -> Result<()> {
    let cfg = model.config.clone();
    let n_actions = model.vocab.n_actions();
    let wrap = corpus.has_background;
    let phis: Vec<Array2<S>> = corpus
        .videos
        .iter()
        .map(|v| {
            let x = v.features.mapv(|f| S::from_f64_lossy(f as f64));
            encode_eval(&x, &model.encoder)
        })
        .collect::<Result<_>>()?;
    let pseudo: Vec<Vec<usize>> = corpus
        .videos
        .iter()
        .map(|v| {
            let seq = decodable_sequence(&v.transcript, wrap);
            uniform_alignment_labels(&seq, v.n_frames())
        })
        .collect();

    let head = model.action_head.as_mut().expect("aux head");
    let mut m_w = Array2::<S>::zeros(head.weight.dim());
    let mut v_w = Array2::<S>::zeros(head.weight.dim());
    let mut m_b = Array1::<S>::zeros(n_actions);
    let mut v_b = Array1::<S>::zeros(n_actions);
    let lr = S::from_f64_lossy(cfg.aux_learning_rate);
    let b1 = S::from_f64_lossy(0.9);
    let b2 = S::from_f64_lossy(0.999);
    let eps = S::from_f64_lossy(1e-8);

    // The head objective is convex given the frozen encoding; full-batch
    // steps keep this phase deterministic.
    let total_frames: usize = pseudo.iter().map(|p| p.len()).sum();
    let inv = S::one() / S::from_usize(total_frames).unwrap();
    for step in 1..=cfg.aux_iterations {
        let mut grad_w = Array2::<S>::zeros(head.weight.dim());
        let mut grad_b = Array1::<S>::zeros(n_actions);
        for (phi, labels) in phis.iter().zip(&pseudo) {
            let mut logits = head.weight.dot(phi);
            for mut c in logits.columns_mut() {
                c += &head.bias;
            }
            for (t, &label) in labels.iter().enumerate() {
                let column = logits.column(t).to_owned();
                let log_p = log_softmax1(&column);
                for a in 0..n_actions {
                    let p = log_p[a].exp();
                    let delta = (p - S::from_usize(usize::from(a == label)).unwrap()) * inv;
                    grad_b[a] += delta;
                    for f in 0..phi.nrows() {
                        grad_w[(a, f)] += delta * phi[(f, t)];
                    }
                }
            }
        }
        let t = step as i32;
        let bias1 = S::one() - b1.powi(t);
        let bias2 = S::one() - b2.powi(t);
        let update = |p: &mut S, g: S, m: &mut S, v: &mut S| {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            *p = *p - lr * (*m / bias1) / ((*v / bias2).sqrt() + eps);
        };
        for ((p, &g), (m, v)) in head
            .weight
            .iter_mut()
            .zip(grad_w.iter())
            .zip(m_w.iter_mut().zip(v_w.iter_mut()))
        {
            update(p, g, m, v);
        }
        for ((p, &g), (m, v)) in
            head.bias.iter_mut().zip(grad_b.iter()).zip(m_b.iter_mut().zip(v_b.iter_mut()))
        {
            update(p, g, m, v);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};

    fn small_corpus(seed: u64) -> Corpus {
        generate_synthetic(&SynthConfig {
            n_tasks: 2,
            n_actions: 6,
            videos_per_task: 4,
            duration_mean: 8.0,
            noise_sigma: 0.2,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn tiny_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            enc_dim: 8,
            hidden_dim: 8,
            kernel_len: 3,
            batch_size: 4,
            ..TrainConfig::synthetic()
        }
    }

    #[test]
    fn zero_iterations_returns_seeded_init() {
        let corpus = small_corpus(1);
        let (model, curve) = train::<f32>(&corpus, &tiny_config(0)).unwrap();
        assert!(curve.is_empty());
        // Same seed reproduces the same initialization.
        let (again, _) = train::<f32>(&corpus, &tiny_config(0)).unwrap();
        assert_eq!(model.encoder.g_weight, again.encoder.g_weight);
        assert_eq!(model.shs.wc, again.shs.wc);
    }

    #[test]
    fn same_seed_gives_identical_models() {
        let corpus = small_corpus(2);
        let cfg = tiny_config(12);
        let (a, curve_a) = train::<f32>(&corpus, &cfg).unwrap();
        let (b, curve_b) = train::<f32>(&corpus, &cfg).unwrap();
        assert_eq!(a.encoder.g_weight, b.encoder.g_weight);
        assert_eq!(a.ths.w_total, b.ths.w_total);
        assert_eq!(a.fusion.w_alpha, b.fusion.w_alpha);
        for (ra, rb) in curve_a.iter().zip(&curve_b) {
            assert_eq!(ra.total, rb.total);
        }
    }

    #[test]
    fn loss_decreases_on_separable_corpus() {
        let corpus = generate_synthetic(&SynthConfig {
            n_tasks: 2,
            n_actions: 6,
            videos_per_task: 6,
            duration_mean: 10.0,
            noise_sigma: 0.05,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let (_, curve) = train::<f32>(&corpus, &tiny_config(500)).unwrap();
        let head: f64 = curve[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        let tail: f64 = curve[curve.len() - 10..].iter().map(|r| r.total).sum::<f64>() / 10.0;
        assert!(
            tail <= 0.5 * head,
            "training loss should halve within 500 iterations: {head} -> {tail}"
        );
    }

    #[test]
    fn long_videos_are_subsampled_in_training() {
        let corpus = generate_synthetic(&SynthConfig {
            n_tasks: 2,
            n_actions: 6,
            videos_per_task: 3,
            duration_mean: 12.0,
            seed: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig { t_max_frames: 16, ..tiny_config(8) };
        assert!(corpus.videos.iter().any(|v| v.n_frames() > 16));
        let (model, curve) = train::<f32>(&corpus, &cfg).unwrap();
        assert_eq!(curve.len(), 8);
        assert!(curve.iter().all(|r| r.total.is_finite()));
        // Eval still runs on the full video.
        let out = model.evaluate(&corpus.videos[0].features).unwrap();
        assert_eq!(out.phi.ncols(), corpus.videos[0].n_frames());
    }

    #[test]
    fn missing_task_is_an_error() {
        let mut corpus = small_corpus(3);
        corpus.videos.retain(|v| v.task != 1);
        let err = train::<f32>(&corpus, &tiny_config(1)).unwrap_err();
        assert!(err.to_string().contains("no training videos"));
    }
}
