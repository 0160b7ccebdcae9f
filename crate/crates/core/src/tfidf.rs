//! TF-IDF attribute weighting.
//!
//! `tf(j, tau)` is the fraction of task-`tau` videos containing attribute `j`;
//! `idf(j)` is the natural log of the inverse fraction of tasks entailing `j`
//! in at least one video. The weight matrix normalizes `tf * idf` per task
//! column with a small `eps` in the denominator, and the binary mask marks
//! the strictly positive weights.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};

use crate::corpus::{Corpus, VideoRecord};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TfidfTables<S> {
    /// Term frequency, attributes x tasks.
    pub tf: Array2<S>,
    pub idf: Array1<S>,
    /// Column-normalized weights, attributes x tasks.
    pub w: Array2<S>,
    /// 1 where `w > 0`.
    pub mask: Array2<u8>,
    pub eps: S,
}

impl<S: Scalar> TfidfTables<S> {
    pub fn n_attributes(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_tasks(&self) -> usize {
        self.w.ncols()
    }
}

/// Build the tables from a corpus.
pub fn build_tfidf<S: Scalar>(corpus: &Corpus, eps: S) -> TfidfTables<S> {
    let sets: Vec<(usize, BTreeSet<usize>)> = corpus
        .videos
        .iter()
        .map(|v| (v.task, v.attributes.clone()))
        .collect();
    build_tfidf_from_sets(corpus.vocab.n_attributes(), corpus.vocab.n_tasks(), &sets, eps)
}

/// Core table construction from `(task, attribute set)` pairs.
pub fn build_tfidf_from_sets<S: Scalar>(
    n_attributes: usize,
    n_tasks: usize,
    videos: &[(usize, BTreeSet<usize>)],
    eps: S,
) -> TfidfTables<S> {
    let mut task_counts = vec![0usize; n_tasks];
    let mut present = Array2::<usize>::zeros((n_attributes, n_tasks));
    for (task, attrs) in videos {
        task_counts[*task] += 1;
        for &j in attrs {
            present[(j, *task)] += 1;
        }
    }

    let mut tf = Array2::<S>::zeros((n_attributes, n_tasks));
    for tau in 0..n_tasks {
        if task_counts[tau] == 0 {
            continue;
        }
        let denom = S::from_usize(task_counts[tau]).unwrap();
        for j in 0..n_attributes {
            tf[(j, tau)] = S::from_usize(present[(j, tau)]).unwrap() / denom;
        }
    }

    let mut idf = Array1::<S>::zeros(n_attributes);
    let n_tasks_s = S::from_usize(n_tasks).unwrap();
    for j in 0..n_attributes {
        let containing = (0..n_tasks).filter(|&tau| tf[(j, tau)] > S::zero()).count();
        if containing == 0 {
            log::warn!("attribute {j} appears in no video; idf set to 0");
            continue;
        }
        idf[j] = (n_tasks_s / S::from_usize(containing).unwrap()).ln();
    }

    let mut w = Array2::<S>::zeros((n_attributes, n_tasks));
    for tau in 0..n_tasks {
        let mut col_sum = S::zero();
        for j in 0..n_attributes {
            col_sum += tf[(j, tau)] * idf[j];
        }
        for j in 0..n_attributes {
            w[(j, tau)] = tf[(j, tau)] * idf[j] / (eps + col_sum);
        }
    }

    let mask = w.mapv(|x| u8::from(x > S::zero()));
    TfidfTables { tf, idf, w, mask, eps }
}

/// TF-IDF-weighted attribute target for one video.
pub fn weighted_attribute_target<S: Scalar>(
    video: &VideoRecord,
    tables: &TfidfTables<S>,
) -> Result<Array1<S>> {
    weighted_target(video.task, &video.attributes, tables)
}

/// Core target computation: the video's attribute indicators reweighted by
/// the task column of `w` and renormalized. If every present attribute has
/// zero weight for the task, falls back to uniform over the present set.
pub fn weighted_target<S: Scalar>(
    task: usize,
    attributes: &BTreeSet<usize>,
    tables: &TfidfTables<S>,
) -> Result<Array1<S>> {
    if attributes.is_empty() {
        return Err(Error::Data("video with no attributes".into()));
    }
    let mut out = Array1::<S>::zeros(tables.n_attributes());
    let mut sum = S::zero();
    for &j in attributes {
        out[j] = tables.w[(j, task)];
        sum += out[j];
    }
    if sum > S::zero() {
        out.mapv_inplace(|x| x / sum);
    } else {
        let share = S::one() / S::from_usize(attributes.len()).unwrap();
        for &j in attributes {
            out[j] = share;
        }
    }
    Ok(out)
}
