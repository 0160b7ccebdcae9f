//! Batch entry points: corpus synthesis, training, classification,
//! segmentation, evaluation, gradient checking, and decode benchmarking.

pub mod commands;

use clap::{Parser, Subcommand};
use hiertask_core::Error;

#[derive(Parser, Debug)]
#[command(name = "hiertask", version, about = "Two-stream hierarchical task recognition and top-down action segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with oracle frame labels.
    Synth(commands::synth::SynthArgs),
    /// Train the two-stream model on a corpus manifest.
    Train(commands::train::TrainArgs),
    /// Per-video task scores and classification metrics.
    Classify(commands::classify::ClassifyArgs),
    /// Grammar-constrained action segmentation.
    Segment(commands::segment::SegmentArgs),
    /// Full evaluation report (classification + segmentation metrics).
    Eval(commands::eval::EvalArgs),
    /// Finite-difference verification of the analytic gradients.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Wall-clock comparison of top-down vs bottom-up decoding.
    Bench(commands::bench::BenchArgs),
}

/// Exit code policy: 0 success, 1 usage/config error, 2 data error
/// (and 2 for a failed gradient check).
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> hiertask_core::Result<i32> {
    match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Classify(args) => commands::classify::run(args),
        Command::Segment(args) => commands::segment::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Bench(args) => commands::bench::run(args),
    }
}
