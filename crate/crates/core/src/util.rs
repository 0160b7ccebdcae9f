//! Small numeric helpers shared across modules.

use ndarray::Array1;

use crate::scalar::Scalar;

/// Log floor used in every cross-entropy term.
pub const LOG_CLAMP: f64 = 30.0;

pub fn softmax1<S: Scalar>(z: &Array1<S>) -> Array1<S> {
    let max = z.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
    let exps = z.mapv(|x| (x - max).exp());
    let sum = exps.sum();
    exps.mapv(|e| e / sum)
}

pub fn log_softmax1<S: Scalar>(z: &Array1<S>) -> Array1<S> {
    let max = z.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
    let sum_exp = z.iter().fold(S::zero(), |acc, &x| acc + (x - max).exp());
    let lse = max + sum_exp.ln();
    z.mapv(|x| x - lse)
}

/// `-sum_j target_j * max(log_p_j, -LOG_CLAMP)`.
pub fn clamped_cross_entropy<S: Scalar>(target: &Array1<S>, log_p: &Array1<S>) -> S {
    let clamp = S::from_f64_lossy(LOG_CLAMP);
    target
        .iter()
        .zip(log_p.iter())
        .fold(S::zero(), |acc, (&t, &lp)| acc - t * lp.max(-clamp))
}

pub fn one_hot<S: Scalar>(index: usize, len: usize) -> Array1<S> {
    let mut v = Array1::zeros(len);
    v[index] = S::one();
    v
}

/// Argmax with ties broken by the lowest index.
pub fn argmax<S: Scalar>(v: &Array1<S>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
