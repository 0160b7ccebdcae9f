use std::path::PathBuf;

use clap::Args;
use hiertask_core::corpus::{generate_synthetic, save_corpus, write_manifest, SynthConfig};
use hiertask_core::{Error, Result};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n_tasks: usize,
    #[arg(long, default_value_t = 12)]
    pub n_actions: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    /// Videos generated per task (including any held-out ones).
    #[arg(long, default_value_t = 12)]
    pub videos_per_task: usize,
    #[arg(long, default_value_t = 2)]
    pub grammars_per_task: usize,
    /// Mean segment duration in frames.
    #[arg(long, default_value_t = 20.0)]
    pub duration_mean: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_sigma: f64,
    /// Probability of a leading (and trailing) background segment.
    #[arg(long, default_value_t = 1.0)]
    pub background_prob: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Hold out the last N videos of each task into manifest_test.csv
    /// (the rest go to manifest_train.csv).
    #[arg(long, default_value_t = 0)]
    pub holdout_per_task: usize,
}

pub fn run(args: SynthArgs) -> Result<i32> {
    if args.holdout_per_task >= args.videos_per_task {
        return Err(Error::Config("holdout_per_task must be < videos_per_task".into()));
    }
    let cfg = SynthConfig {
        n_tasks: args.n_tasks,
        n_actions: args.n_actions,
        feature_dim: args.feature_dim,
        videos_per_task: args.videos_per_task,
        grammars_per_task: args.grammars_per_task,
        duration_mean: args.duration_mean,
        noise_sigma: args.noise_sigma,
        background_prob: args.background_prob,
        seed: args.seed,
    };
    let corpus = generate_synthetic(&cfg)?;
    save_corpus(&corpus, &args.out)?;
    if args.holdout_per_task > 0 {
        // Videos are generated task-major, so each task's block is contiguous.
        let keep = args.videos_per_task - args.holdout_per_task;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for task in 0..args.n_tasks {
            let base = task * args.videos_per_task;
            train.extend(base..base + keep);
            test.extend(base + keep..base + args.videos_per_task);
        }
        write_manifest(&corpus, &args.out, "manifest_train.csv", &train)?;
        write_manifest(&corpus, &args.out, "manifest_test.csv", &test)?;
    }
    println!(
        "wrote {} videos ({} tasks, {} actions) to {}",
        corpus.len(),
        args.n_tasks,
        args.n_actions,
        args.out.display()
    );
    Ok(0)
}
