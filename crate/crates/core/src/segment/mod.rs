//! Top-down weakly-supervised action segmentation: frame posteriors, class
//! priors, Poisson durations, grammar sets, and constrained Viterbi decoding.

mod align;
mod durations;
mod grammar;
mod scores;

pub use align::{align_grammar, decode, labels_from_segments, Segment, Segmentation};
pub use durations::{
    fit_durations, fit_log_priors, uniform_alignment_labels, DurationModel,
};
pub use grammar::{build_grammar_store, decodable_sequence, GrammarStore};
pub use scores::{export_frame_scores, frame_scores, import_frame_scores, FrameScores};

use ndarray::Array2;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::training::ModelParams;

/// Decoder search-space policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Constrain to the grammars of the predicted task.
    TopDown,
    /// Search all grammars; the task is implied by the winner.
    BottomUp,
    /// Constrain to the grammars of the ground-truth task (upper bound).
    OracleTask(usize),
}

/// Duration model from the statistics stored in a trained model.
pub fn durations_from_model<S: Scalar>(model: &ModelParams<S>) -> DurationModel {
    DurationModel::from_lambda(model.seg_stats.duration_lambda.clone(), model.config.dmax_factor)
}

/// Top-down decoding: predict the task from the fused eval-mode scores, then
/// decode within that task's grammars. Falls back to the full grammar set
/// when the predicted task owns none.
pub fn decode_topdown<S: Scalar>(
    features: &Array2<f32>,
    model: &ModelParams<S>,
    store: &GrammarStore,
    durations: &DurationModel,
) -> Result<Segmentation> {
    let scores = frame_scores(features, model)?;
    let task = model.predict_task(features)?;
    decode_for_task(&scores, task, store, durations)
}

/// Decode constrained to one task's grammars (shared by the top-down and
/// oracle-task paths).
pub fn decode_for_task(
    scores: &FrameScores,
    task: usize,
    store: &GrammarStore,
    durations: &DurationModel,
) -> Result<Segmentation> {
    let subset = &store.by_task[task];
    if subset.is_empty() {
        log::warn!("task {task} owns no grammars; falling back to the full set");
        return decode(scores, &store.all_indices(), durations, store);
    }
    decode(scores, subset, durations, store)
}

/// One-call segmentation of a video under a decode mode.
pub fn segment_video<S: Scalar>(
    features: &Array2<f32>,
    model: &ModelParams<S>,
    store: &GrammarStore,
    durations: &DurationModel,
    mode: DecodeMode,
) -> Result<Segmentation> {
    let scores = frame_scores(features, model)?;
    match mode {
        DecodeMode::TopDown => {
            let task = model.predict_task(features)?;
            decode_for_task(&scores, task, store, durations)
        }
        DecodeMode::BottomUp => decode(&scores, &store.all_indices(), durations, store),
        DecodeMode::OracleTask(task) => decode_for_task(&scores, task, store, durations),
    }
}
