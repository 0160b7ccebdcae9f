//! Per-frame action log-posteriors feeding the decoder.

use std::path::Path;

use ndarray::Array2;

use crate::corpus::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::training::config::PosteriorSource;
use crate::training::ModelParams;

/// Frame-level scores over the full action vocabulary (background row 0).
#[derive(Debug, Clone)]
pub struct FrameScores {
    /// Log-posteriors, actions x frames; each column exponentiates to 1.
    pub log_post: Array2<f64>,
    /// Log-prior per action. The decoder scores frames by
    /// `log_post - log_prior`.
    pub log_prior: Vec<f64>,
}

impl FrameScores {
    pub fn n_actions(&self) -> usize {
        self.log_post.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.log_post.ncols()
    }
}

/// Compute frame scores for a video with a trained model.
///
/// The default source is the dedicated action head (fit on uniform-alignment
/// pseudo-labels). With `posterior = tcam` the T-CAM attribute head is
/// reused instead: its rows are the non-background action rows and the
/// background row is a constant zero logit; this requires the identity
/// decomposition. Columns are log-softmax normalized.
pub fn frame_scores<S: Scalar>(
    features: &Array2<f32>,
    model: &ModelParams<S>,
) -> Result<FrameScores> {
    if !model.seg_stats.is_fitted() {
        return Err(Error::Data("untrained model: segmentation statistics missing".into()));
    }
    let x = features.mapv(|v| S::from_f64_lossy(v as f64));
    let phi = crate::encoder::encode_eval(&x, &model.encoder)?;
    let frames = phi.ncols();
    let n_actions = model.vocab.n_actions();

    let use_tcam = model.config.posterior == PosteriorSource::Tcam;
    let mut logits = Array2::<f64>::zeros((n_actions, frames));
    if use_tcam {
        if !model.vocab.is_identity_decomposition() {
            return Err(Error::Config(
                "posterior=tcam requires attributes to be the actions (identity decomposition)"
                    .into(),
            ));
        }
        let cam = crate::shs::tcam(&phi, &model.shs)?;
        for a in 1..n_actions {
            for t in 0..frames {
                logits[(a, t)] = cam[(a - 1, t)].to_f64_lossy();
            }
        }
        // Background row stays at the zero logit.
    } else {
        let head = model.action_head.as_ref().ok_or_else(|| {
            Error::Data("untrained model: frame-classifier head missing".into())
        })?;
        let mut raw = head.weight.dot(&phi);
        for mut col in raw.columns_mut() {
            col += &head.bias;
        }
        for a in 0..n_actions {
            for t in 0..frames {
                logits[(a, t)] = raw[(a, t)].to_f64_lossy();
            }
        }
    }

    let mut log_post = Array2::<f64>::zeros((n_actions, frames));
    for t in 0..frames {
        let col: Vec<f64> = (0..n_actions).map(|a| logits[(a, t)]).collect();
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for a in 0..n_actions {
            log_post[(a, t)] = col[a] - lse;
        }
    }
    Ok(FrameScores { log_post, log_prior: model.seg_stats.log_prior.clone() })
}

/// Export scores in the WTE1 matrix format (log-posteriors plus a one-column
/// prior matrix), for decoder-only testing.
pub fn export_frame_scores(dir: &Path, id: &str, scores: &FrameScores) -> Result<()> {
    write_matrix(&dir.join(format!("{id}.post.wte")), &scores.log_post.mapv(|v| v as f32))?;
    let prior = Array2::from_shape_fn((scores.log_prior.len(), 1), |(a, _)| {
        scores.log_prior[a] as f32
    });
    write_matrix(&dir.join(format!("{id}.prior.wte")), &prior)
}

pub fn import_frame_scores(dir: &Path, id: &str) -> Result<FrameScores> {
    let log_post = read_matrix(&dir.join(format!("{id}.post.wte")))?.mapv(|v| v as f64);
    let prior = read_matrix(&dir.join(format!("{id}.prior.wte")))?;
    if prior.ncols() != 1 || prior.nrows() != log_post.nrows() {
        return Err(Error::Format(format!("{id}: prior matrix shape mismatch")));
    }
    let log_prior = prior.column(0).iter().map(|&v| v as f64).collect();
    Ok(FrameScores { log_post, log_prior })
}
