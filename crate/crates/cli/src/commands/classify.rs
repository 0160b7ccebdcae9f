use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use hiertask_core::metrics::task_metrics;
use hiertask_core::Result;
use ndarray::Array2;

use super::{ensure_dir, load_corpus_for_model, load_model, map_videos, write_json, write_text};

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory (scores.csv, task_metrics.json).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn run(args: ClassifyArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let corpus = load_corpus_for_model(&args.manifest, &model)?;
    ensure_dir(&args.out)?;

    let probs = map_videos(args.jobs, corpus.len(), |i| {
        let out = model.evaluate(&corpus.videos[i].features)?;
        Ok(out.fused_probs.mapv(|p| p as f64))
    })?;

    let n_tasks = model.vocab.n_tasks();
    let mut scores = Array2::<f64>::zeros((corpus.len(), n_tasks));
    for (i, p) in probs.iter().enumerate() {
        scores.row_mut(i).assign(p);
    }
    let gt: Vec<usize> = corpus.videos.iter().map(|v| v.task).collect();
    let metrics = task_metrics(&scores, &gt)?;

    let mut csv = String::from("id,gt_task,pred_task");
    for task in &model.vocab.tasks {
        let _ = write!(csv, ",p_{task}");
    }
    csv.push('\n');
    for (i, video) in corpus.videos.iter().enumerate() {
        let row = scores.row(i);
        let mut pred = 0;
        for j in 1..n_tasks {
            if row[j] > row[pred] {
                pred = j;
            }
        }
        let _ = write!(
            csv,
            "{},{},{}",
            video.id, model.vocab.tasks[video.task], model.vocab.tasks[pred]
        );
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write_text(&args.out.join("scores.csv"), &csv)?;
    write_json(&args.out.join("task_metrics.json"), &metrics)?;
    println!("t-acc {:.4}  t-mAP {:.4}  ({} videos)", metrics.t_acc, metrics.t_map, corpus.len());
    Ok(0)
}
