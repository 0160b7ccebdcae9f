//! Synthetic corpus generation for desk-scale experiments.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Corpus, SynthConfig, VideoRecord, Vocabularies, BACKGROUND, BACKGROUND_NAME};
use crate::error::{Error, Result};

const GRAMMAR_LEN_MIN: usize = 3;
const GRAMMAR_LEN_MAX: usize = 6;
const MAX_GRAMMAR_ATTEMPTS: usize = 10_000;

/// Generate a deterministic synthetic corpus.
///
/// Each task owns `grammars_per_task` distinct action sequences (no adjacent
/// repeats, so the run-length invariant holds). Tasks are identifiable the
/// way instructional tasks are: every grammar of a task contains the task's
/// one or two signature actions, with the remaining steps drawn from the
/// shared pool. Every video picks one of its task's grammars, samples each
/// segment length from a shifted-geometric distribution with the configured
/// mean, and emits per-frame features as the action's Gaussian mean plus
/// isotropic noise. Background segments are inserted at the start and end of
/// a video, each with probability `background_prob`. Oracle frame labels are
/// recorded on every video.
#[allow(clippy::needless_range_loop)]
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    check_feasible(cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let tasks: Vec<String> = (0..cfg.n_tasks).map(|t| format!("task_{t:02}")).collect();
    let mut actions = vec![BACKGROUND_NAME.to_string()];
    actions.extend((1..=cfg.n_actions).map(|a| format!("act_{a:02}")));
    let vocab = Vocabularies::identity(tasks, actions)?;

    // Per-action feature means, background included.
    let means: Vec<Vec<f64>> = (0..=cfg.n_actions)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut grammars: Vec<Vec<Vec<usize>>> = Vec::with_capacity(cfg.n_tasks);
    for task in 0..cfg.n_tasks {
        let signatures = signature_actions(cfg, task);
        let pool = filler_pool(cfg, &signatures);
        grammars.push(sample_task_grammars(cfg, &signatures, &pool, &mut rng)?);
    }

    let mut videos = Vec::with_capacity(cfg.n_tasks * cfg.videos_per_task);
    for task in 0..cfg.n_tasks {
        for v in 0..cfg.videos_per_task {
            let grammar = &grammars[task][rng.random_range(0..cfg.grammars_per_task)];
            let mut sequence = Vec::with_capacity(grammar.len() + 2);
            if rng.random::<f64>() < cfg.background_prob {
                sequence.push(BACKGROUND);
            }
            sequence.extend(grammar.iter().copied());
            if rng.random::<f64>() < cfg.background_prob {
                sequence.push(BACKGROUND);
            }

            let mut frame_labels = Vec::new();
            for &action in &sequence {
                let len = sample_shifted_geometric(cfg.duration_mean, &mut rng);
                frame_labels.extend(std::iter::repeat_n(action, len));
            }

            let t = frame_labels.len();
            let mut features = Array2::<f32>::zeros((cfg.feature_dim, t));
            for (frame, &action) in frame_labels.iter().enumerate() {
                for d in 0..cfg.feature_dim {
                    let z: f64 = rng.sample(StandardNormal);
                    features[(d, frame)] = (means[action][d] + cfg.noise_sigma * z) as f32;
                }
            }

            let attributes = grammar
                .iter()
                .flat_map(|&a| vocab.action_to_attrs[a].iter().copied())
                .collect();
            videos.push(VideoRecord {
                id: format!("t{task:02}_v{v:03}"),
                features,
                task,
                transcript: grammar.clone(),
                attributes,
                frame_labels: Some(frame_labels),
            });
        }
    }

    Corpus::new(vocab, videos)
}

fn check_feasible(cfg: &SynthConfig) -> Result<()> {
    let available: u64 = if cfg.n_actions == 1 {
        1
    } else {
        let n = cfg.n_actions as u64;
        let mut total: u64 = 0;
        for len in GRAMMAR_LEN_MIN..=GRAMMAR_LEN_MAX {
            let mut count = n;
            for _ in 1..len {
                count = count.saturating_mul(n - 1);
            }
            total = total.saturating_add(count);
        }
        total
    };
    if cfg.grammars_per_task as u64 > available {
        return Err(Error::Config(format!(
            "infeasible synthetic config: {} grammars per task requested but only {} distinct action sequences exist",
            cfg.grammars_per_task, available
        )));
    }
    Ok(())
}

/// One or two actions that mark a task; two when the action pool is large
/// enough for disjoint pairs.
fn signature_actions(cfg: &SynthConfig, task: usize) -> Vec<usize> {
    let per_task = if cfg.n_actions >= 2 * cfg.n_tasks { 2 } else { 1 };
    (0..per_task).map(|j| 1 + (task * per_task + j) % cfg.n_actions).collect()
}

/// Actions a task may draw non-signature steps from: its own signatures plus
/// the actions that are no task's signature. Falls back to the full pool
/// when that leaves too little room for no-repeat sequences.
fn filler_pool(cfg: &SynthConfig, signatures: &[usize]) -> Vec<usize> {
    let per_task = if cfg.n_actions >= 2 * cfg.n_tasks { 2 } else { 1 };
    let assigned = (cfg.n_tasks * per_task).min(cfg.n_actions);
    let mut pool: Vec<usize> = signatures.to_vec();
    pool.extend(assigned + 1..=cfg.n_actions);
    if pool.len() < 2 {
        pool = (1..=cfg.n_actions).collect();
    }
    pool
}

fn sample_task_grammars(
    cfg: &SynthConfig,
    signatures: &[usize],
    pool: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let mut grammars: Vec<Vec<usize>> = Vec::with_capacity(cfg.grammars_per_task);
    let mut attempts = 0;
    while grammars.len() < cfg.grammars_per_task {
        attempts += 1;
        if attempts > MAX_GRAMMAR_ATTEMPTS {
            return Err(Error::Config(
                "infeasible synthetic config: could not sample distinct grammars".into(),
            ));
        }
        if let Some(g) = sample_grammar(cfg.n_actions, signatures, pool, rng) {
            if !grammars.contains(&g) {
                grammars.push(g);
            }
        }
    }
    Ok(grammars)
}

/// Random action sequence over indices 1..=n_actions with no adjacent
/// repeats, containing every signature action once. `None` when the sampled
/// signature placement cannot be filled (tiny action pools).
fn sample_grammar(
    n_actions: usize,
    signatures: &[usize],
    pool: &[usize],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    if n_actions == 1 {
        return Some(vec![1]);
    }
    let len = rng.random_range(GRAMMAR_LEN_MIN.max(signatures.len())..=GRAMMAR_LEN_MAX);
    let mut slots: Vec<Option<usize>> = vec![None; len];
    let positions = rand::seq::index::sample(rng, len, signatures.len());
    for (&sig, p) in signatures.iter().zip(positions.iter()) {
        slots[p] = Some(sig);
    }
    for i in 0..len {
        if slots[i].is_some() {
            continue;
        }
        let mut tries = 0;
        slots[i] = Some(loop {
            tries += 1;
            if tries > 100 {
                return None;
            }
            let a = pool[rng.random_range(0..pool.len())];
            let prev_ok = i == 0 || slots[i - 1] != Some(a);
            let next_ok = i + 1 >= len || slots[i + 1] != Some(a);
            if prev_ok && next_ok {
                break a;
            }
        });
    }
    Some(slots.into_iter().map(Option::unwrap).collect())
}

/// Shifted geometric with support >= 1 and the given mean, by inversion.
fn sample_shifted_geometric(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    let p = 1.0 / mean;
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = rng.random();
    1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize
}
