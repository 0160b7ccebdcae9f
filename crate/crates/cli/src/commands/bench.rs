use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use hiertask_core::segment::{
    build_grammar_store, decode, decode_for_task, durations_from_model, frame_scores,
};
use hiertask_core::{Error, Result};
use serde::Serialize;

use super::{load_corpus_for_model, load_model, write_json};

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output timing table (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub grammar_manifest: Option<PathBuf>,
    /// Worker count; timing is stable at 1.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Timed repetitions; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
}

#[derive(Serialize)]
struct BenchReport {
    videos: usize,
    grammars: usize,
    /// Mean grammar count of the constrained search per video.
    topdown_grammars_mean: f64,
    /// Sum of grammar lengths searched, frame-weighted, constrained over
    /// unconstrained: the predicted decode-time ratio.
    predicted_work_ratio: f64,
    bottomup_seconds: f64,
    topdown_seconds: f64,
    measured_ratio: f64,
    reps: usize,
    jobs: usize,
}

pub fn run(args: BenchArgs) -> Result<i32> {
    if args.reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    let model = load_model(&args.model)?;
    let corpus = load_corpus_for_model(&args.manifest, &model)?;
    let grammar_corpus = match &args.grammar_manifest {
        Some(path) => load_corpus_for_model(path, &model)?,
        None => corpus.clone(),
    };
    let store = build_grammar_store(&grammar_corpus);
    let durations = durations_from_model(&model);

    // Shared, untimed preparation: frame scores and task predictions. Both
    // decode modes consume identical inputs; the benchmark isolates the
    // dynamic program, which dominates inference at corpus scale.
    let mut scores = Vec::with_capacity(corpus.len());
    let mut tasks = Vec::with_capacity(corpus.len());
    for video in &corpus.videos {
        scores.push(frame_scores(&video.features, &model)?);
        tasks.push(model.predict_task(&video.features)?);
    }

    let all = store.all_indices();
    let full_work: usize = store.work(&all);
    let mut predicted_num = 0.0;
    let mut predicted_den = 0.0;
    let mut constrained_count = 0usize;
    for (s, &task) in scores.iter().zip(&tasks) {
        let subset = &store.by_task[task];
        let subset_work =
            if subset.is_empty() { full_work } else { store.work(subset) };
        constrained_count += if subset.is_empty() { store.len() } else { subset.len() };
        let frames = s.n_frames() as f64;
        predicted_num += frames * subset_work as f64;
        predicted_den += frames * full_work as f64;
    }
    let predicted_work_ratio = predicted_num / predicted_den;

    let mut bottomup_seconds = f64::INFINITY;
    let mut topdown_seconds = f64::INFINITY;
    for _ in 0..args.reps {
        let started = Instant::now();
        for s in &scores {
            decode(s, &all, &durations, &store)?;
        }
        bottomup_seconds = bottomup_seconds.min(started.elapsed().as_secs_f64());

        let started = Instant::now();
        for (s, &task) in scores.iter().zip(&tasks) {
            decode_for_task(s, task, &store, &durations)?;
        }
        topdown_seconds = topdown_seconds.min(started.elapsed().as_secs_f64());
    }

    let report = BenchReport {
        videos: corpus.len(),
        grammars: store.len(),
        topdown_grammars_mean: constrained_count as f64 / corpus.len() as f64,
        predicted_work_ratio,
        bottomup_seconds,
        topdown_seconds,
        measured_ratio: topdown_seconds / bottomup_seconds,
        reps: args.reps,
        jobs: args.jobs,
    };
    write_json(&args.out, &report)?;
    println!(
        "bottom-up {:.4}s  top-down {:.4}s  ratio {:.3} (predicted {:.3}, {} grammars)",
        report.bottomup_seconds,
        report.topdown_seconds,
        report.measured_ratio,
        report.predicted_work_ratio,
        report.grammars
    );
    Ok(0)
}
