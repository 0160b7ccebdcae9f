//! Poisson duration model and uniform-alignment corpus statistics.

use super::grammar::decodable_sequence;
use crate::corpus::Corpus;

/// Per-action Poisson duration model with a capped support.
#[derive(Debug, Clone)]
pub struct DurationModel {
    /// Poisson mean per action, frames.
    pub lambda: Vec<f64>,
    /// Longest segment the decoder considers (further clamped to the video
    /// length at decode time).
    pub d_max: usize,
    ln_factorial: Vec<f64>,
}

impl DurationModel {
    pub fn from_lambda(lambda: Vec<f64>, dmax_factor: f64) -> Self {
        let max_lambda = lambda.iter().cloned().fold(1.0f64, f64::max);
        let d_max = ((dmax_factor * max_lambda).ceil() as usize).max(1);
        Self::with_cap(lambda, d_max)
    }

    /// Explicit segment-length cap.
    pub fn with_cap(lambda: Vec<f64>, d_max: usize) -> Self {
        let d_max = d_max.max(1);
        let mut ln_factorial = Vec::with_capacity(d_max + 1);
        ln_factorial.push(0.0);
        for l in 1..=d_max {
            ln_factorial.push(ln_factorial[l - 1] + (l as f64).ln());
        }
        DurationModel { lambda, d_max, ln_factorial }
    }

    /// Poisson log-pmf at integer length `len` (1 <= len <= d_max).
    pub fn log_pmf(&self, len: usize, action: usize) -> f64 {
        debug_assert!(len >= 1 && len <= self.d_max);
        let lambda = self.lambda[action];
        len as f64 * lambda.ln() - lambda - self.ln_factorial[len]
    }
}

/// Uniform-alignment duration fit: each occurrence of an action in a
/// decodable sequence of length S over T frames contributes T/S frames;
/// lambda is the mean contribution. Unobserved actions fall back to the
/// global mean.
pub fn fit_durations(corpus: &Corpus) -> DurationModel {
    let n_actions = corpus.vocab.n_actions();
    let shares = uniform_alignment_shares(corpus);
    let mut global_sum = 0.0;
    let mut global_count = 0usize;
    for (sum, count) in &shares {
        global_sum += sum;
        global_count += count;
    }
    let global_mean = if global_count == 0 { 1.0 } else { global_sum / global_count as f64 };
    let lambda: Vec<f64> = (0..n_actions)
        .map(|a| {
            let (sum, count) = shares[a];
            if count == 0 {
                log::warn!(
                    "action \"{}\" never observed; duration falls back to the global mean",
                    corpus.vocab.actions[a]
                );
                global_mean
            } else {
                sum / count as f64
            }
        })
        .collect();
    DurationModel::from_lambda(lambda, 3.0)
}

fn uniform_alignment_shares(corpus: &Corpus) -> Vec<(f64, usize)> {
    let mut shares = vec![(0.0, 0usize); corpus.vocab.n_actions()];
    for video in &corpus.videos {
        let seq = decodable_sequence(&video.transcript, corpus.has_background);
        let share = video.n_frames() as f64 / seq.len() as f64;
        for &a in &seq {
            shares[a].0 += share;
            shares[a].1 += 1;
        }
    }
    shares
}

/// Uniform-alignment class priors (log). Unobserved actions receive the
/// global mean share before normalization.
pub fn fit_log_priors(corpus: &Corpus) -> Vec<f64> {
    let shares = uniform_alignment_shares(corpus);
    let observed: Vec<f64> = shares.iter().filter(|(_, c)| *c > 0).map(|(s, _)| *s).collect();
    let fallback = if observed.is_empty() {
        1.0
    } else {
        observed.iter().sum::<f64>() / observed.len() as f64
    };
    let mass: Vec<f64> = shares
        .iter()
        .map(|&(sum, count)| if count == 0 { fallback } else { sum })
        .collect();
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| (m / total).ln()).collect()
}

/// Equal-split pseudo-labels: frame t of T gets symbol `seq[t * S / T]`.
pub fn uniform_alignment_labels(seq: &[usize], frames: usize) -> Vec<usize> {
    (0..frames).map(|t| seq[t * seq.len() / frames]).collect()
}
