//! Stream fusion: average, weighted-average, or task-wise switching gates.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::util::{argmax, softmax1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Average,
    Weighted,
    Gated,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(FusionMode::Average),
            "weighted" => Ok(FusionMode::Weighted),
            "gated" => Ok(FusionMode::Gated),
            other => Err(Error::Config(format!(
                "unknown fusion mode \"{other}\" (expected average, weighted, or gated)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Average => "average",
            FusionMode::Weighted => "weighted",
            FusionMode::Gated => "gated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Only the active mode's fields are present (and trained).
#[derive(Debug, Clone)]
pub struct FusionParams<S> {
    pub mode: FusionMode,
    pub w1: Option<Array2<S>>,
    pub w2: Option<Array2<S>>,
    pub w_alpha: Option<Array1<S>>,
    pub beta: S,
}

impl<S: Scalar> FusionParams<S> {
    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        if self.beta < S::zero() {
            return Err(Error::Config("beta must be >= 0".into()));
        }
        let shape_ok = match self.mode {
            FusionMode::Average => self.w1.is_none() && self.w2.is_none() && self.w_alpha.is_none(),
            FusionMode::Weighted => {
                self.w_alpha.is_none()
                    && matches!((&self.w1, &self.w2), (Some(a), Some(b))
                        if a.dim() == (n_tasks, n_tasks) && b.dim() == (n_tasks, n_tasks))
            }
            FusionMode::Gated => {
                self.w1.is_none()
                    && self.w2.is_none()
                    && matches!(&self.w_alpha, Some(w) if w.len() == n_tasks)
            }
        };
        if !shape_ok {
            return Err(Error::Config(format!(
                "fusion parameters do not match mode {}",
                self.mode
            )));
        }
        Ok(())
    }

    pub fn alpha(&self) -> Option<Array1<S>> {
        self.w_alpha.as_ref().map(|w| w.mapv(sigmoid))
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Heaviside step shifted to 0.5; the boundary selects the temporal stream.
fn heaviside_half<S: Scalar>(x: S) -> S {
    if x >= S::from_f64_lossy(0.5) {
        S::one()
    } else {
        S::zero()
    }
}

/// Fuse stream logits into final task logits and probabilities.
pub fn fuse<S: Scalar>(
    theta_total: &Array1<S>,
    psi_c_logits: &Array1<S>,
    p: &FusionParams<S>,
    phase: Phase,
) -> Result<(Array1<S>, Array1<S>)> {
    if theta_total.len() != psi_c_logits.len() {
        return Err(Error::Data("fusion: stream score lengths differ".into()));
    }
    let logits = match p.mode {
        FusionMode::Average => (theta_total + psi_c_logits).mapv(|x| x * S::from_f64_lossy(0.5)),
        FusionMode::Weighted => {
            let (w1, w2) = match (&p.w1, &p.w2) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Config("weighted fusion without w1/w2".into())),
            };
            w1.dot(theta_total) + w2.dot(psi_c_logits)
        }
        FusionMode::Gated => {
            let w_alpha = p
                .w_alpha
                .as_ref()
                .ok_or_else(|| Error::Config("gated fusion without w_alpha".into()))?;
            let alpha = w_alpha.mapv(sigmoid);
            let gate = match phase {
                Phase::Train => alpha,
                Phase::Eval => alpha.mapv(heaviside_half),
            };
            Array1::from_shape_fn(theta_total.len(), |c| {
                gate[c] * theta_total[c] + (S::one() - gate[c]) * psi_c_logits[c]
            })
        }
    };
    let probs = softmax1(&logits);
    Ok((logits, probs))
}

/// Total loss; the gradient-stop contract for the fusion term lives in the
/// training graph, which detaches the stream logits entering `fuse`.
pub fn total_loss<S: Scalar>(l_f: S, l_sh: S, l_th: S, beta: S) -> S {
    l_f + l_sh + beta * l_th
}

/// Argmax task with ties broken by the lowest index.
pub fn predict_task<S: Scalar>(scores: &Array1<S>) -> usize {
    argmax(scores)
}
