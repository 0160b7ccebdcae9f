//! Semantic hierarchy stream: temporal class activation map, top-k attribute
//! pooling, masked attribute-to-task mapping, and the semantic loss.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::util::{clamped_cross_entropy, log_softmax1, one_hot, softmax1};

#[derive(Debug, Clone)]
pub struct ShsParams<S> {
    /// Attribute head, attributes x encoding dim.
    pub attr_weight: Array2<S>,
    pub attr_bias: Array1<S>,
    /// Attribute-to-task map, tasks x attributes (masked elementwise).
    pub wc: Array2<S>,
    /// Pooling divisor: k = max(1, floor(T / s)).
    pub s: usize,
    pub lambda: S,
}

impl<S: Scalar> ShsParams<S> {
    pub fn n_attributes(&self) -> usize {
        self.attr_weight.nrows()
    }

    pub fn n_tasks(&self) -> usize {
        self.wc.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::Config("pooling divisor s must be >= 1".into()));
        }
        let lambda = self.lambda.to_f64_lossy();
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {lambda}")));
        }
        if self.attr_bias.len() != self.n_attributes() || self.wc.ncols() != self.n_attributes() {
            return Err(Error::Config("semantic stream dimension mismatch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ShsOutputs<S> {
    /// Per-frame attribute scores, attributes x frames.
    pub tcam: Array2<S>,
    pub psi_a: Array1<S>,
    pub psi_c_logits: Array1<S>,
    pub psi_c_probs: Array1<S>,
    pub psi_a_probs: Array1<S>,
}

/// Per-frame attribute scores.
pub fn tcam<S: Scalar>(phi: &Array2<S>, p: &ShsParams<S>) -> Result<Array2<S>> {
    if phi.nrows() != p.attr_weight.ncols() {
        return Err(Error::Data(format!(
            "tcam: encoding dim {} does not match parameters ({})",
            phi.nrows(),
            p.attr_weight.ncols()
        )));
    }
    let mut m = p.attr_weight.dot(phi);
    for mut col in m.columns_mut() {
        col += &p.attr_bias;
    }
    Ok(m)
}

/// Number of pooled frames for a given video length.
pub fn pool_count(frames: usize, s: usize) -> usize {
    (frames / s).max(1)
}

/// Indices of the k largest entries per row, ties broken by lower frame index.
pub fn topk_indices<S: Scalar>(tcam: &Array2<S>, s: usize) -> Vec<Vec<usize>> {
    let k = pool_count(tcam.ncols(), s);
    tcam.rows()
        .into_iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| {
                row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
            });
            let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
            chosen.sort_unstable();
            chosen
        })
        .collect()
}

/// Average of the k largest T-CAM scores per attribute.
pub fn topk_pool<S: Scalar>(tcam: &Array2<S>, s: usize) -> Array1<S> {
    let indices = topk_indices(tcam, s);
    pool_at(tcam, &indices)
}

/// Pool at fixed index sets (used to replay a recorded forward pass).
pub fn pool_at<S: Scalar>(tcam: &Array2<S>, indices: &[Vec<usize>]) -> Array1<S> {
    Array1::from_shape_fn(tcam.nrows(), |j| {
        let idx = &indices[j];
        let sum = idx.iter().fold(S::zero(), |acc, &t| acc + tcam[(j, t)]);
        sum / S::from_usize(idx.len()).unwrap()
    })
}

/// Masked attribute-to-task mapping: logits = (wc (.) mask^T) relu(psi_a).
pub fn shs_task_scores<S: Scalar>(
    psi_a: &Array1<S>,
    wc: &Array2<S>,
    mask: &Array2<u8>,
) -> (Array1<S>, Array1<S>) {
    debug_assert_eq!(mask.dim(), (wc.ncols(), wc.nrows()), "mask is attributes x tasks");
    let n_tasks = wc.nrows();
    let relu = psi_a.mapv(|x| if x > S::zero() { x } else { S::zero() });
    let logits = Array1::from_shape_fn(n_tasks, |c| {
        (0..wc.ncols()).fold(S::zero(), |acc, j| {
            if mask[(j, c)] == 1 {
                acc + wc[(c, j)] * relu[j]
            } else {
                acc
            }
        })
    });
    let probs = softmax1(&logits);
    (logits, probs)
}

/// Full semantic stream on an encoded video.
pub fn forward<S: Scalar>(
    phi: &Array2<S>,
    p: &ShsParams<S>,
    mask: &Array2<u8>,
) -> Result<ShsOutputs<S>> {
    let map = tcam(phi, p)?;
    let psi_a = topk_pool(&map, p.s);
    let (psi_c_logits, psi_c_probs) = shs_task_scores(&psi_a, &p.wc, mask);
    let psi_a_probs = softmax1(&psi_a);
    Ok(ShsOutputs { tcam: map, psi_a, psi_c_logits, psi_c_probs, psi_a_probs })
}

/// Semantic hierarchy loss over a batch:
/// `lambda * E[CE(a_w, softmax(psi_a))] + (1 - lambda) * E[CE(c, softmax(psi_c))]`.
pub fn semantic_loss<S: Scalar>(
    batch: &[ShsOutputs<S>],
    weighted_targets: &[Array1<S>],
    tasks: &[usize],
    lambda: S,
) -> S {
    assert!(!batch.is_empty());
    let n = S::from_usize(batch.len()).unwrap();
    let mut attr_term = S::zero();
    let mut task_term = S::zero();
    for ((out, target), &task) in batch.iter().zip(weighted_targets).zip(tasks) {
        attr_term += clamped_cross_entropy(target, &log_softmax1(&out.psi_a));
        let c = one_hot::<S>(task, out.psi_c_logits.len());
        task_term += clamped_cross_entropy(&c, &log_softmax1(&out.psi_c_logits));
    }
    lambda * attr_term / n + (S::one() - lambda) * task_term / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params(attr_weight: Array2<f64>, wc: Array2<f64>, s: usize) -> ShsParams<f64> {
        let n = attr_weight.nrows();
        ShsParams { attr_weight, attr_bias: Array1::zeros(n), wc, s, lambda: 0.9 }
    }

    #[test]
    fn zero_weights_give_constant_tcam() {
        let mut p = params(Array2::zeros((3, 2)), Array2::zeros((2, 3)), 8);
        p.attr_bias = array![1.0, -2.0, 0.5];
        let phi = Array2::from_shape_fn((2, 5), |(r, c)| (r + c) as f64);
        let m = tcam(&phi, &p).unwrap();
        for t in 0..5 {
            assert_eq!(m.column(t).to_vec(), vec![1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn tcam_single_frame_shape() {
        let p = params(Array2::ones((4, 3)), Array2::zeros((2, 4)), 8);
        let phi = Array2::<f64>::ones((3, 1));
        assert_eq!(tcam(&phi, &p).unwrap().dim(), (4, 1));
    }

    #[test]
    fn tcam_matches_naive_per_frame_products() {
        let mut rng = 17u64;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut p = params(
            Array2::from_shape_fn((3, 4), |_| next()),
            Array2::zeros((2, 3)),
            8,
        );
        p.attr_bias = Array1::from_shape_fn(3, |_| next());
        let phi = Array2::from_shape_fn((4, 6), |_| next());
        let m = tcam(&phi, &p).unwrap();
        for t in 0..6 {
            for j in 0..3 {
                let want: f64 =
                    (0..4).map(|f| p.attr_weight[(j, f)] * phi[(f, t)]).sum::<f64>() + p.attr_bias[j];
                assert!((m[(j, t)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn topk_example_from_sorted_row() {
        // T=16, s=8 -> k=2; the two largest of the row are 9 and 7.
        let mut row = vec![1.0, 9.0, 2.0, 7.0, 0.0];
        row.extend(std::iter::repeat_n(-1.0, 11));
        let m = Array2::from_shape_vec((1, 16), row).unwrap();
        let pooled = topk_pool(&m, 8);
        assert_eq!(pooled[0], 8.0);
    }

    #[test]
    fn topk_constant_row_is_identity() {
        let m = Array2::from_elem((2, 10), 3.25);
        let pooled = topk_pool(&m, 4);
        assert_eq!(pooled.to_vec(), vec![3.25, 3.25]);
    }

    #[test]
    fn topk_clamps_k_to_one() {
        let m = Array2::from_shape_vec((1, 7), vec![0.0, 5.0, 1.0, 2.0, 3.0, 4.0, -2.0]).unwrap();
        let pooled = topk_pool(&m, 8);
        assert_eq!(pooled[0], 5.0, "k floor(7/8)=0 clamps to 1: row max");
    }

    #[test]
    fn topk_breaks_ties_by_lower_frame() {
        let m = Array2::from_shape_vec((1, 4), vec![2.0, 2.0, 2.0, 1.0]).unwrap();
        let idx = topk_indices(&m, 2);
        assert_eq!(idx[0], vec![0, 1]);
    }

    #[test]
    fn topk_is_permutation_invariant_and_bounded() {
        let vals = [0.3, -1.0, 2.5, 0.3, 1.1, 0.0, -0.7, 2.5];
        let m = Array2::from_shape_vec((1, 8), vals.to_vec()).unwrap();
        let pooled = topk_pool(&m, 3);
        let mut rev = vals;
        rev.reverse();
        let m2 = Array2::from_shape_vec((1, 8), rev.to_vec()).unwrap();
        assert_eq!(pooled[0], topk_pool(&m2, 3)[0]);
        let mean = vals.iter().sum::<f64>() / 8.0;
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        assert!(pooled[0] >= mean && pooled[0] <= max);
    }

    #[test]
    fn fully_masked_scores_are_uniform() {
        let psi_a: Array1<f64> = array![1.0, 2.0, 3.0];
        let wc = Array2::from_elem((2, 3), 0.7);
        let mask = Array2::zeros((3, 2));
        let (logits, probs) = shs_task_scores(&psi_a, &wc, &mask);
        assert!(logits.iter().all(|&x| x == 0.0));
        assert!(probs.iter().all(|&x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn negative_attribute_scores_are_relu_killed() {
        let psi_a: Array1<f64> = array![-1.0, -0.5, -3.0];
        let wc = Array2::from_elem((2, 3), 1.0);
        let mask = Array2::ones((3, 2));
        let (logits, probs) = shs_task_scores(&psi_a, &wc, &mask);
        assert!(logits.iter().all(|&x| x == 0.0));
        assert!(probs.iter().all(|&x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn hand_computed_two_task_scores() {
        // Task 0 sees attributes {0, 1}, task 1 sees {2}.
        let psi_a: Array1<f64> = array![2.0, -1.0, 3.0];
        let wc = array![[0.5, 1.0, 9.0], [9.0, 9.0, 0.25]];
        let mask = array![[1, 0], [1, 0], [0, 1]];
        let (logits, _) = shs_task_scores(&psi_a, &wc, &mask);
        // relu(psi_a) = (2, 0, 3); task0 = 0.5*2 + 1.0*0 = 1; task1 = 0.25*3.
        assert!((logits[0] - 1.0).abs() < 1e-12);
        assert!((logits[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn masked_positions_of_wc_are_inert() {
        let psi_a: Array1<f64> = array![2.0, 1.0, 3.0];
        let mask = array![[1, 0], [0, 1], [1, 1]];
        let wc = array![[0.5, -1.0, 2.0], [0.3, 0.7, -0.2]];
        let (base, _) = shs_task_scores(&psi_a, &wc, &mask);
        let mut zeroed = wc.clone();
        zeroed[(0, 1)] = 0.0; // mask(1, 0) = 0
        zeroed[(1, 0)] = 0.0; // mask(0, 1) = 0
        let (same, _) = shs_task_scores(&psi_a, &zeroed, &mask);
        assert_eq!(base, same);
    }

    fn outputs_from(psi_a: Array1<f64>, psi_c_logits: Array1<f64>) -> ShsOutputs<f64> {
        let psi_a_probs = softmax1(&psi_a);
        let psi_c_probs = softmax1(&psi_c_logits);
        ShsOutputs { tcam: Array2::zeros((psi_a.len(), 1)), psi_a, psi_c_logits, psi_c_probs, psi_a_probs }
    }

    #[test]
    fn semantic_loss_endpoints_and_hand_value() {
        let out = outputs_from(array![0.2, 1.4, -0.3], array![2.0, -1.0]);
        let target = array![0.0, 1.0, 0.0];
        // lambda = 1: pure attribute term.
        let attr_only = semantic_loss(std::slice::from_ref(&out), std::slice::from_ref(&target), &[0], 1.0);
        let expected_attr = clamped_cross_entropy(&target, &log_softmax1(&array![0.2, 1.4, -0.3]));
        assert!((attr_only - expected_attr).abs() < 1e-12);

        // Hand value at lambda = 0.9.
        let expected_task =
            clamped_cross_entropy(&array![1.0, 0.0], &log_softmax1(&array![2.0, -1.0]));
        let both = semantic_loss(&[out], &[target], &[0], 0.9);
        assert!((both - (0.9 * expected_attr + 0.1 * expected_task)).abs() < 1e-12);
    }

    #[test]
    fn perfect_task_prediction_with_lambda_zero_is_near_zero() {
        let out = outputs_from(array![0.0, 0.0], array![60.0, 0.0]);
        let loss = semantic_loss(&[out], &[array![0.5, 0.5]], &[0], 0.0);
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }
}
