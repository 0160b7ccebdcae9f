//! Grammar-constrained segment decoding.
//!
//! `align_grammar` is an exact dynamic program over (segment index, end
//! frame) with transitions of length 1..=d_max, maximizing the sum of frame
//! likelihoods (`log_post - log_prior`) plus per-segment Poisson duration
//! terms. Complexity O(S * T * d_max).

use super::durations::DurationModel;
use super::grammar::GrammarStore;
use super::scores::FrameScores;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Segment {
    pub action: usize,
    pub start: usize,
    pub len: usize,
}

/// A decoded video: frame labels, the segment list, and the winning grammar.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: Vec<usize>,
    pub segments: Vec<Segment>,
    pub log_score: f64,
    pub grammar: usize,
    pub task: usize,
}

pub fn labels_from_segments(segments: &[Segment], frames: usize) -> Vec<usize> {
    let mut labels = vec![0usize; frames];
    for seg in segments {
        for t in seg.start..seg.start + seg.len {
            labels[t] = seg.action;
        }
    }
    labels
}

/// Optimal boundary placement for a fixed grammar.
pub fn align_grammar(
    scores: &FrameScores,
    grammar: &[usize],
    durations: &DurationModel,
) -> Result<(Vec<Segment>, f64)> {
    let frames = scores.n_frames();
    let n_segments = grammar.len();
    if n_segments == 0 {
        return Err(Error::Data("empty grammar".into()));
    }
    if n_segments > frames {
        return Err(Error::Data(format!(
            "grammar longer than video ({n_segments} segments, {frames} frames)"
        )));
    }
    let d_max = durations.d_max.min(frames);

    // Per-segment prefix sums of the frame likelihood rows.
    let mut prefix = vec![vec![0.0f64; frames + 1]; n_segments];
    for (s, &action) in grammar.iter().enumerate() {
        let row = scores.log_post.row(action);
        let prior = scores.log_prior[action];
        for t in 0..frames {
            prefix[s][t + 1] = prefix[s][t] + row[t] - prior;
        }
    }

    let mut best = vec![vec![f64::NEG_INFINITY; frames + 1]; n_segments];
    let mut back = vec![vec![0u32; frames + 1]; n_segments];
    for s in 0..n_segments {
        // Frames must remain for the segments before and after s.
        let t_lo = s + 1;
        let t_hi = frames - (n_segments - 1 - s);
        for t in t_lo..=t_hi {
            let max_len = d_max.min(t - s);
            if s == 0 {
                if t <= max_len {
                    best[0][t] = prefix[0][t] + durations.log_pmf(t, grammar[0]);
                    back[0][t] = t as u32;
                }
                continue;
            }
            let mut best_score = f64::NEG_INFINITY;
            let mut best_len = 0u32;
            for len in 1..=max_len {
                let before = best[s - 1][t - len];
                if before == f64::NEG_INFINITY {
                    continue;
                }
                let score = before + prefix[s][t] - prefix[s][t - len]
                    + durations.log_pmf(len, grammar[s]);
                if score > best_score {
                    best_score = score;
                    best_len = len as u32;
                }
            }
            best[s][t] = best_score;
            back[s][t] = best_len;
        }
    }

    let total = best[n_segments - 1][frames];
    if total == f64::NEG_INFINITY {
        return Err(Error::Data(format!(
            "no feasible alignment (duration cap {d_max} too tight for {frames} frames)"
        )));
    }
    let mut segments = Vec::with_capacity(n_segments);
    let mut t = frames;
    for s in (0..n_segments).rev() {
        let len = back[s][t] as usize;
        segments.push(Segment { action: grammar[s], start: t - len, len });
        t -= len;
    }
    segments.reverse();
    Ok((segments, total))
}

/// Best grammar in a subset; ties go to the earlier entry (lower grammar
/// index when the subset is ascending). Grammars longer than the video or
/// with no feasible alignment are skipped with a diagnostic.
pub fn decode(
    scores: &FrameScores,
    subset: &[usize],
    durations: &DurationModel,
    store: &GrammarStore,
) -> Result<Segmentation> {
    if subset.is_empty() {
        return Err(Error::Data("no feasible grammar (empty subset)".into()));
    }
    let frames = scores.n_frames();
    let mut best: Option<Segmentation> = None;
    for &gi in subset {
        let grammar = &store.all_grammars[gi];
        if grammar.len() > frames {
            log::warn!("grammar {gi} longer than video ({} > {frames}); skipped", grammar.len());
            continue;
        }
        match align_grammar(scores, grammar, durations) {
            Ok((segments, log_score)) => {
                if best.as_ref().is_none_or(|b| log_score > b.log_score) {
                    best = Some(Segmentation {
                        labels: labels_from_segments(&segments, frames),
                        segments,
                        log_score,
                        grammar: gi,
                        task: store.grammar_task[gi],
                    });
                }
            }
            Err(e) => log::warn!("grammar {gi} skipped: {e}"),
        }
    }
    best.ok_or_else(|| Error::Data("no feasible grammar".into()))
}
