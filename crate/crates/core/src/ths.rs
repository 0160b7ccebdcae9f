//! Temporal hierarchy stream: equal-duration stage summaries, per-stage
//! classifiers, stage dropout, and the learned aggregation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::util::{clamped_cross_entropy, log_softmax1, one_hot, softmax1};

#[derive(Debug, Clone)]
pub struct ThsParams<S> {
    /// One (tasks x encoding dim) classifier per stage.
    pub stage_weights: Vec<Array2<S>>,
    pub stage_biases: Vec<Array1<S>>,
    /// Aggregation weights, (stages * tasks) x tasks.
    pub w_total: Array2<S>,
}

impl<S: Scalar> ThsParams<S> {
    pub fn n_stages(&self) -> usize {
        self.stage_weights.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.stage_weights[0].nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_stages();
        if k == 0 || self.stage_biases.len() != k {
            return Err(Error::Config("temporal stream needs at least one stage".into()));
        }
        let c = self.n_tasks();
        if self.w_total.dim() != (k * c, c) {
            return Err(Error::Config("aggregation weight shape mismatch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ThsOutputs<S> {
    /// Stage feature summaries, encoding dim x stages.
    pub summaries: Array2<S>,
    /// Stage logits, stages x tasks.
    pub stage_logits: Array2<S>,
    pub stage_probs: Array2<S>,
    pub total_logits: Array1<S>,
    pub total_probs: Array1<S>,
}

/// Equal stage extents; the last stage absorbs the remainder.
pub fn stage_bounds(frames: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if frames < k {
        return Err(Error::Data(format!("video shorter than stage count ({frames} < {k})")));
    }
    let d = frames / k;
    Ok((0..k)
        .map(|kappa| {
            let start = kappa * d;
            let end = if kappa + 1 == k { frames } else { start + d };
            (start, end)
        })
        .collect())
}

/// Mean of the encoding over each stage; columns are stages.
pub fn stage_summaries<S: Scalar>(phi: &Array2<S>, k: usize) -> Result<Array2<S>> {
    let bounds = stage_bounds(phi.ncols(), k)?;
    let mut h = Array2::<S>::zeros((phi.nrows(), k));
    for (kappa, &(start, end)) in bounds.iter().enumerate() {
        let width = S::from_usize(end - start).unwrap();
        let mean = phi
            .slice(ndarray::s![.., start..end])
            .sum_axis(Axis(1))
            .mapv(|x| x / width);
        h.column_mut(kappa).assign(&mean);
    }
    Ok(h)
}

/// Per-stage affine classifiers; rows are stages.
pub fn stage_logits<S: Scalar>(h: &Array2<S>, p: &ThsParams<S>) -> Array2<S> {
    let k = p.n_stages();
    let c = p.n_tasks();
    let mut out = Array2::<S>::zeros((k, c));
    for kappa in 0..k {
        let v = p.stage_weights[kappa].dot(&h.column(kappa)) + &p.stage_biases[kappa];
        out.row_mut(kappa).assign(&v);
    }
    out
}

/// Zero one stage row and rescale the rest by K/(K-1).
pub fn apply_stage_mask<S: Scalar>(values: &Array2<S>, dropped: usize) -> Array2<S> {
    let k = values.nrows();
    debug_assert!(k >= 2 && dropped < k);
    let scale = S::from_usize(k).unwrap() / S::from_usize(k - 1).unwrap();
    let mut out = values.mapv(|x| x * scale);
    out.row_mut(dropped).fill(S::zero());
    out
}

/// Stage dropout; returns the masked values and the dropped stage (train only).
pub fn stage_dropout_with_choice<S: Scalar, R: Rng>(
    values: &Array2<S>,
    train: bool,
    rng: &mut R,
) -> (Array2<S>, Option<usize>) {
    let k = values.nrows();
    if !train {
        return (values.clone(), None);
    }
    if k < 2 {
        log::warn!("stage dropout skipped: masking the only stage would zero the stream");
        return (values.clone(), None);
    }
    let dropped = rng.random_range(0..k);
    (apply_stage_mask(values, dropped), Some(dropped))
}

pub fn stage_dropout<S: Scalar, R: Rng>(values: &Array2<S>, train: bool, rng: &mut R) -> Array2<S> {
    stage_dropout_with_choice(values, train, rng).0
}

/// Learned aggregation: flatten(relu(masked)) stage-major, then `w_total`.
pub fn aggregate_stages<S: Scalar>(masked: &Array2<S>, w_total: &Array2<S>) -> Array1<S> {
    let (k, c) = masked.dim();
    debug_assert_eq!(w_total.dim(), (k * c, c));
    let mut out = Array1::<S>::zeros(c);
    for kappa in 0..k {
        for j in 0..c {
            let x = masked[(kappa, j)];
            let x = if x > S::zero() { x } else { S::zero() };
            let flat_index = kappa * c + j;
            for task in 0..c {
                out[task] += x * w_total[(flat_index, task)];
            }
        }
    }
    out
}

/// Full temporal stream on an encoded video.
pub fn forward<S: Scalar, R: Rng>(
    phi: &Array2<S>,
    p: &ThsParams<S>,
    train: bool,
    rng: &mut R,
) -> Result<ThsOutputs<S>> {
    let gamma = if train && p.n_stages() >= 2 {
        Some(rng.random_range(0..p.n_stages()))
    } else {
        if train {
            log::warn!("stage dropout skipped: masking the only stage would zero the stream");
        }
        None
    };
    forward_with_mask(phi, p, gamma)
}

/// Deterministic eval-mode forward (no stage dropout).
pub fn forward_eval<S: Scalar>(phi: &Array2<S>, p: &ThsParams<S>) -> Result<ThsOutputs<S>> {
    forward_with_mask(phi, p, None)
}

pub fn forward_with_mask<S: Scalar>(
    phi: &Array2<S>,
    p: &ThsParams<S>,
    gamma: Option<usize>,
) -> Result<ThsOutputs<S>> {
    let summaries = stage_summaries(phi, p.n_stages())?;
    let logits = stage_logits(&summaries, p);
    let masked = match gamma {
        Some(dropped) => apply_stage_mask(&logits, dropped),
        None => logits.clone(),
    };
    let total_logits = aggregate_stages(&masked, &p.w_total);
    let total_probs = softmax1(&total_logits);
    let mut stage_probs = Array2::<S>::zeros(logits.dim());
    for (kappa, row) in logits.rows().into_iter().enumerate() {
        stage_probs.row_mut(kappa).assign(&softmax1(&row.to_owned()));
    }
    Ok(ThsOutputs { summaries, stage_logits: logits, stage_probs, total_logits, total_probs })
}

/// Temporal hierarchy loss: CE of the aggregated prediction plus the sum of
/// per-stage CE terms, each a mean over the batch.
pub fn temporal_loss<S: Scalar>(batch: &[ThsOutputs<S>], tasks: &[usize]) -> S {
    assert!(!batch.is_empty());
    let n = S::from_usize(batch.len()).unwrap();
    let k = batch[0].stage_logits.nrows();
    let c = batch[0].total_logits.len();
    let mut total_term = S::zero();
    let mut stage_term = S::zero();
    for (out, &task) in batch.iter().zip(tasks) {
        let target = one_hot::<S>(task, c);
        total_term += clamped_cross_entropy(&target, &log_softmax1(&out.total_logits));
        for kappa in 0..k {
            let row = out.stage_logits.row(kappa).to_owned();
            stage_term += clamped_cross_entropy(&target, &log_softmax1(&row));
        }
    }
    total_term / n + stage_term / n
}
