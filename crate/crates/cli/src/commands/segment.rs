use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use hiertask_core::metrics::{pool_segmentation, segmentation_metrics, SegCounts};
use hiertask_core::segment::{
    build_grammar_store, decode, decode_for_task, durations_from_model, export_frame_scores,
    frame_scores, GrammarStore, Segmentation,
};
use hiertask_core::{Error, Result};
use serde::Serialize;

use super::{ensure_dir, load_corpus_for_model, load_model, map_videos, write_json, write_text};

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory (per-video CSV, summary.jsonl, seg_metrics.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Search space: the predicted task's grammars, all grammars, or the
    /// ground-truth task's grammars (upper bound).
    #[arg(long, default_value = "topdown", value_parser = ["topdown", "bottomup", "oracle-task"])]
    pub mode: String,
    /// Manifest whose transcripts define the grammar set; defaults to
    /// --manifest.
    #[arg(long)]
    pub grammar_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Export per-video frame scores in the WTE1 matrix format.
    #[arg(long)]
    pub dump_scores: Option<PathBuf>,
}

#[derive(Serialize)]
struct SummaryRow {
    id: String,
    mode: String,
    task: String,
    grammar: usize,
    grammars_evaluated: usize,
    log_score: f64,
    wall_ms: f64,
}

pub struct VideoResult {
    pub seg: Segmentation,
    pub grammars_evaluated: usize,
    pub wall_ms: f64,
}

/// Segment every video of a corpus under one decode mode.
pub fn segment_corpus(
    corpus: &hiertask_core::corpus::Corpus,
    model: &hiertask_core::ModelF32,
    store: &GrammarStore,
    mode: &str,
    jobs: usize,
    dump_scores: Option<&PathBuf>,
) -> Result<Vec<VideoResult>> {
    let durations = durations_from_model(model);
    if let Some(dir) = dump_scores {
        ensure_dir(dir)?;
    }
    map_videos(jobs, corpus.len(), |i| {
        let video = &corpus.videos[i];
        let started = Instant::now();
        let scores = frame_scores(&video.features, model)?;
        let (seg, evaluated) = match mode {
            "bottomup" => {
                let all = store.all_indices();
                (decode(&scores, &all, &durations, store)?, all.len())
            }
            "oracle-task" => {
                let subset = &store.by_task[video.task];
                (decode_for_task(&scores, video.task, store, &durations)?, subset.len().max(1))
            }
            _ => {
                let task = model.predict_task(&video.features)?;
                let subset = &store.by_task[task];
                let n = if subset.is_empty() { store.len() } else { subset.len() };
                (decode_for_task(&scores, task, store, &durations)?, n)
            }
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        if let Some(dir) = dump_scores {
            export_frame_scores(dir, &video.id, &scores)?;
        }
        Ok(VideoResult { seg, grammars_evaluated: evaluated, wall_ms })
    })
}

pub fn run(args: SegmentArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let corpus = load_corpus_for_model(&args.manifest, &model)?;
    let grammar_corpus = match &args.grammar_manifest {
        Some(path) => load_corpus_for_model(path, &model)?,
        None => corpus.clone(),
    };
    let store = build_grammar_store(&grammar_corpus);
    if store.is_empty() {
        return Err(Error::Data("grammar store is empty".into()));
    }
    ensure_dir(&args.out)?;

    let results =
        segment_corpus(&corpus, &model, &store, &args.mode, args.jobs, args.dump_scores.as_ref())?;

    let mut summary = String::new();
    let mut counts: Vec<SegCounts> = Vec::new();
    for (video, result) in corpus.videos.iter().zip(&results) {
        let mut csv = String::from("frame,label\n");
        for (t, &label) in result.seg.labels.iter().enumerate() {
            let _ = writeln!(csv, "{t},{}", model.vocab.actions[label]);
        }
        write_text(&args.out.join(format!("{}.csv", video.id)), &csv)?;
        let row = SummaryRow {
            id: video.id.clone(),
            mode: args.mode.clone(),
            task: model.vocab.tasks[result.seg.task].clone(),
            grammar: result.seg.grammar,
            grammars_evaluated: result.grammars_evaluated,
            log_score: result.seg.log_score,
            wall_ms: result.wall_ms,
        };
        summary.push_str(
            &serde_json::to_string(&row)
                .map_err(|e| Error::Format(format!("summary row serialization failed: {e}")))?,
        );
        summary.push('\n');
        if let Some(gt) = &video.frame_labels {
            counts.push(segmentation_metrics(&result.seg.labels, gt, 0)?);
        }
    }
    write_text(&args.out.join("summary.jsonl"), &summary)?;

    if counts.len() == corpus.len() {
        let pooled = pool_segmentation(&counts)?;
        write_json(&args.out.join("seg_metrics.json"), &pooled)?;
        println!(
            "{}: acc {:.4}  acc-bg {:.4}  IoU {:.4}  IoD {:.4}  ({} videos)",
            args.mode,
            pooled.acc,
            pooled.acc_bg,
            pooled.iou,
            pooled.iod,
            corpus.len()
        );
    } else {
        println!("{}: segmented {} videos (no oracle labels)", args.mode, corpus.len());
    }
    Ok(0)
}
