//! Adam with optional decoupled weight decay.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::config::TrainConfig;
use super::model::ModelParams;
use crate::scalar::Scalar;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct AdamState<S> {
    pub step: u64,
    moments: BTreeMap<String, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new() -> Self {
        AdamState { step: 0, moments: BTreeMap::new() }
    }
}

/// One optimizer step over the trainable tensors. Missing gradient entries
/// are treated as zero. With decoupled decay enabled, parameters shrink by
/// (1 - lr * wd) before the moment update; otherwise wd * p joins the
/// gradient.
pub fn adam_step<S: Scalar>(
    model: &mut ModelParams<S>,
    grads: &BTreeMap<String, Array2<S>>,
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let lr = S::from_f64_lossy(cfg.learning_rate);
    let wd = S::from_f64_lossy(cfg.weight_decay);
    let b1 = S::from_f64_lossy(BETA1);
    let b2 = S::from_f64_lossy(BETA2);
    let eps = S::from_f64_lossy(EPS);
    let bias1 = S::one() - b1.powi(t);
    let bias2 = S::one() - b2.powi(t);
    let decoupled = cfg.decoupled_decay;
    let shrink = S::one() - lr * wd;

    let moments = &mut state.moments;
    model.visit_trainable_mut(|name, mut tensor| {
        let n = tensor.len();
        let (m, v) = moments
            .entry(name.clone())
            .or_insert_with(|| (vec![S::zero(); n], vec![S::zero(); n]));
        let grad = grads.get(&name);
        for i in 0..n {
            let mut p = tensor.get(i);
            let mut g = grad.map_or(S::zero(), |g| flat(g, i));
            if decoupled {
                p = p * shrink;
            } else {
                g = g + wd * p;
            }
            m[i] = b1 * m[i] + (S::one() - b1) * g;
            v[i] = b2 * v[i] + (S::one() - b2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p = p - lr * m_hat / (v_hat.sqrt() + eps);
            tensor.set(i, p);
        }
    });
}

fn flat<S: Scalar>(g: &Array2<S>, i: usize) -> S {
    let c = g.ncols();
    g[(i / c, i % c)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::gradcheck::canonical_instance;

    fn grads_of(model: &ModelParams<f64>, value: f64) -> BTreeMap<String, Array2<f64>> {
        use crate::training::model::TensorView;
        let mut grads = BTreeMap::new();
        model.visit_trainable(|name, view| {
            let shape = match view {
                TensorView::Mat(m) => m.dim(),
                TensorView::Col(v) => (v.len(), 1),
            };
            grads.insert(name, Array2::from_elem(shape, value));
        });
        grads
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params() {
        let (mut model, _) = canonical_instance(3);
        model.config.weight_decay = 0.0;
        let reference = model.clone();
        let cfg = model.config.clone();
        let mut state = AdamState::new();
        let grads = grads_of(&model, 0.0);
        adam_step(&mut model, &grads, &mut state, &cfg);
        let mut diffs = 0usize;
        let mut refs = Vec::new();
        reference.visit_trainable(|_, v| refs.push(v.to_matrix()));
        let mut i = 0;
        model.visit_trainable(|_, v| {
            if v.to_matrix() != refs[i] {
                diffs += 1;
            }
            i += 1;
        });
        assert_eq!(diffs, 0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut model, _) = canonical_instance(4);
        model.config.weight_decay = 0.0;
        model.config.learning_rate = 1e-3;
        let cfg = model.config.clone();
        let before = model.encoder.g_weight[(0, 0)];
        let mut state = AdamState::new();
        let grads = grads_of(&model, 1.0);
        adam_step(&mut model, &grads, &mut state, &cfg);
        let delta = model.encoder.g_weight[(0, 0)] - before;
        let expected = -1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((delta - expected).abs() < 1e-12, "delta {delta} vs {expected}");
    }

    #[test]
    fn identical_gradients_update_identically() {
        let (mut model, _) = canonical_instance(5);
        // Make two parameters equal, give them equal gradients.
        model.encoder.g_weight[(0, 0)] = 0.25;
        model.encoder.g_weight[(1, 0)] = 0.25;
        let cfg = model.config.clone();
        let mut grads = grads_of(&model, 0.0);
        let g = grads.get_mut("encoder.g_weight").unwrap();
        g[(0, 0)] = 0.7;
        g[(1, 0)] = 0.7;
        let mut state = AdamState::new();
        adam_step(&mut model, &grads, &mut state, &cfg);
        assert_eq!(model.encoder.g_weight[(0, 0)], model.encoder.g_weight[(1, 0)]);
    }

    #[test]
    fn decoupled_decay_shrinks_before_update() {
        let (mut model, _) = canonical_instance(6);
        model.config.weight_decay = 0.1;
        model.config.learning_rate = 0.01;
        model.encoder.g_weight[(0, 0)] = 1.0;
        let cfg = model.config.clone();
        let mut state = AdamState::new();
        let grads = grads_of(&model, 0.0);
        adam_step(&mut model, &grads, &mut state, &cfg);
        // Zero gradient: the only movement is the decoupled shrink.
        assert!((model.encoder.g_weight[(0, 0)] - (1.0 - 0.01 * 0.1)).abs() < 1e-12);
    }
}
