use std::path::PathBuf;

use clap::Args;
use hiertask_core::metrics::{
    pool_segmentation, segmentation_metrics, task_metrics, EvalReport, PerVideoRow,
};
use hiertask_core::segment::build_grammar_store;
use hiertask_core::Result;
use ndarray::Array2;

use super::segment::segment_corpus;
use super::{load_corpus_for_model, load_model, map_videos, write_json};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "topdown", value_parser = ["topdown", "bottomup", "oracle-task"])]
    pub mode: String,
    #[arg(long)]
    pub grammar_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn run(args: EvalArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let corpus = load_corpus_for_model(&args.manifest, &model)?;

    // Classification metrics.
    let probs = map_videos(args.jobs, corpus.len(), |i| {
        let out = model.evaluate(&corpus.videos[i].features)?;
        Ok(out.fused_probs.mapv(|p| p as f64))
    })?;
    let mut scores = Array2::<f64>::zeros((corpus.len(), model.vocab.n_tasks()));
    for (i, p) in probs.iter().enumerate() {
        scores.row_mut(i).assign(p);
    }
    let gt: Vec<usize> = corpus.videos.iter().map(|v| v.task).collect();
    let tm = task_metrics(&scores, &gt)?;

    // Segmentation metrics when oracle labels exist.
    let have_labels = corpus.videos.iter().all(|v| v.frame_labels.is_some());
    let (seg_summary, per_video_seg) = if have_labels {
        let grammar_corpus = match &args.grammar_manifest {
            Some(path) => load_corpus_for_model(path, &model)?,
            None => corpus.clone(),
        };
        let store = build_grammar_store(&grammar_corpus);
        let results = segment_corpus(&corpus, &model, &store, &args.mode, args.jobs, None)?;
        let counts: Vec<_> = corpus
            .videos
            .iter()
            .zip(&results)
            .map(|(v, r)| {
                segmentation_metrics(&r.seg.labels, v.frame_labels.as_ref().unwrap(), 0)
            })
            .collect::<Result<_>>()?;
        (Some(pool_segmentation(&counts)?), counts.into_iter().map(Some).collect())
    } else {
        (None, vec![None; corpus.len()])
    };

    let per_video = corpus
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let row = scores.row(i);
            let mut pred = 0;
            for j in 1..row.len() {
                if row[j] > row[pred] {
                    pred = j;
                }
            }
            PerVideoRow {
                id: v.id.clone(),
                gt_task: model.vocab.tasks[v.task].clone(),
                pred_task: model.vocab.tasks[pred].clone(),
                seg: per_video_seg[i],
            }
        })
        .collect();

    let report = EvalReport {
        t_acc: tm.t_acc,
        t_map: tm.t_map,
        per_task_ap: model
            .vocab
            .tasks
            .iter()
            .cloned()
            .zip(tm.per_task_ap.iter().copied())
            .collect(),
        segmentation: seg_summary,
        per_video,
    };
    write_json(&args.out, &report)?;
    print!("{}", report.render_table());
    Ok(0)
}
