use std::path::PathBuf;

use clap::Args;
use hiertask_core::corpus::VideoRecord;
use hiertask_core::training::gradcheck::{
    canonical_instance, check_gradients, fusion_stop_leak, GradCheckReport, LossSelect,
};
use hiertask_core::Result;
use serde::Serialize;

use super::write_json;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Pass/fail threshold on the per-tensor relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Serialize)]
struct FullReport {
    seed: u64,
    step: f64,
    tolerance: f64,
    losses: Vec<GradCheckReport>,
    fusion_stop_leak: f64,
    max_rel_err: f64,
    passed: bool,
}

pub fn run(args: GradcheckArgs) -> Result<i32> {
    let (model, videos) = canonical_instance(args.seed);
    let batch: Vec<&VideoRecord> = vec![&videos[0], &videos[2]];

    let mut losses = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    for select in LossSelect::ALL {
        let report = check_gradients(&model, &batch, select, args.step)?;
        println!("{:<6} max rel err {:.3e}", report.loss, report.max_rel_err);
        max_rel_err = max_rel_err.max(report.max_rel_err);
        losses.push(report);
    }
    let leak = fusion_stop_leak(&model, &batch)?;
    println!("L_f gradient into stream parameters: {leak:.3e} (must be exactly 0)");

    let passed = max_rel_err < args.tolerance && leak == 0.0;
    let report = FullReport {
        seed: args.seed,
        step: args.step,
        tolerance: args.tolerance,
        losses,
        fusion_stop_leak: leak,
        max_rel_err,
        passed,
    };
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    println!("gradcheck {}: max rel err {max_rel_err:.3e}", if passed { "PASS" } else { "FAIL" });
    Ok(if passed { 0 } else { 2 })
}
