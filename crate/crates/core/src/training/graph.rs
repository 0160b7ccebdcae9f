//! Builds the training loss graph on the autodiff tape.
//!
//! A forward pass over a batch either records its stochastic choices
//! (subsampling window, dropout mask, top-k index sets, stage mask) into
//! [`VideoPlan`]s or replays previously recorded plans. Replaying under
//! perturbed parameters is exactly the function the finite-difference
//! gradient checks differentiate, with the selection sets held fixed.
//!
//! The fusion loss consumes detached stream logits, so its gradient reaches
//! only the fusion parameters. For finite differencing the detached inputs
//! can instead be pinned to explicit constants recorded at the base point.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::ModelParams;
use super::window::window_indices;
use crate::autodiff::{Gradients, Tape, Var};
use crate::corpus::VideoRecord;
use crate::encoder::dropout_mask;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::scalar::Scalar;
use crate::shs::topk_indices;
use crate::tfidf::weighted_attribute_target;
use crate::ths::stage_bounds;
use crate::util::{one_hot, LOG_CLAMP};

/// Tape variables of every trainable tensor, in `visit_trainable` order.
pub struct ParamVars {
    pub named: Vec<(String, Var)>,
    pub g_weight: Var,
    pub g_bias: Var,
    pub conv: Vec<Var>,
    pub attr_weight: Var,
    pub attr_bias: Var,
    pub wc: Var,
    pub stage_weights: Vec<Var>,
    pub stage_biases: Vec<Var>,
    pub w_total: Var,
    pub w1: Option<Var>,
    pub w2: Option<Var>,
    pub w_alpha: Option<Var>,
}

fn col<S: Scalar>(v: &Array1<S>) -> Array2<S> {
    v.clone().insert_axis(Axis(1))
}

pub fn bind_params<S: Scalar>(tape: &mut Tape<S>, m: &ModelParams<S>) -> ParamVars {
    let mut named = Vec::new();
    let mat = |tape: &mut Tape<S>, name: String, v: &Array2<S>, named: &mut Vec<(String, Var)>| {
        let var = tape.leaf(v.clone());
        named.push((name, var));
        var
    };
    let g_weight = mat(tape, "encoder.g_weight".into(), &m.encoder.g_weight, &mut named);
    let g_bias = mat(tape, "encoder.g_bias".into(), &col(&m.encoder.g_bias), &mut named);
    let conv: Vec<Var> = m
        .encoder
        .conv_taps
        .iter()
        .enumerate()
        .map(|(l, tap)| mat(tape, format!("encoder.conv.{l:02}"), tap, &mut named))
        .collect();
    let attr_weight = mat(tape, "shs.attr_weight".into(), &m.shs.attr_weight, &mut named);
    let attr_bias = mat(tape, "shs.attr_bias".into(), &col(&m.shs.attr_bias), &mut named);
    let wc = mat(tape, "shs.wc".into(), &m.shs.wc, &mut named);
    let stage_weights: Vec<Var> = m
        .ths
        .stage_weights
        .iter()
        .enumerate()
        .map(|(k, w)| mat(tape, format!("ths.stage_weight.{k:02}"), w, &mut named))
        .collect();
    let stage_biases: Vec<Var> = m
        .ths
        .stage_biases
        .iter()
        .enumerate()
        .map(|(k, b)| mat(tape, format!("ths.stage_bias.{k:02}"), &col(b), &mut named))
        .collect();
    let w_total = mat(tape, "ths.w_total".into(), &m.ths.w_total, &mut named);
    let w1 = m.fusion.w1.as_ref().map(|w| mat(tape, "fusion.w1".into(), w, &mut named));
    let w2 = m.fusion.w2.as_ref().map(|w| mat(tape, "fusion.w2".into(), w, &mut named));
    let w_alpha = m
        .fusion
        .w_alpha
        .as_ref()
        .map(|w| mat(tape, "fusion.w_alpha".into(), &col(w), &mut named));
    ParamVars {
        named,
        g_weight,
        g_bias,
        conv,
        attr_weight,
        attr_bias,
        wc,
        stage_weights,
        stage_biases,
        w_total,
        w1,
        w2,
        w_alpha,
    }
}

/// Stochastic choices of one video's forward pass.
#[derive(Debug, Clone)]
pub struct VideoPlan<S> {
    /// Subsampled frame indices, when the video exceeds the frame cap.
    pub window: Option<Vec<usize>>,
    /// Inverted-dropout mask over the encoding (0 or 1/keep).
    pub dropout: Option<Array2<S>>,
    /// Per-attribute pooled frame indices.
    pub topk: Vec<Vec<usize>>,
    /// Dropped stage, when stage dropout applies.
    pub gamma: Option<usize>,
}

pub enum PlanMode<'a, S> {
    Record(&'a mut ChaCha8Rng),
    Replay(&'a [VideoPlan<S>]),
}

pub struct BatchLosses {
    pub l_sh: Var,
    pub l_th: Var,
    pub l_f: Var,
    pub total: Var,
}

pub struct BatchGraph<S> {
    pub losses: BatchLosses,
    pub plans: Vec<VideoPlan<S>>,
    /// Numeric stream logits per video: (theta_total, psi_c).
    pub streams: Vec<(Array1<S>, Array1<S>)>,
}

fn add_chain<S: Scalar>(tape: &mut Tape<S>, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    acc
}

/// Build the three losses and their total for one batch.
pub fn build_batch<S: Scalar>(
    tape: &mut Tape<S>,
    pv: &ParamVars,
    model: &ModelParams<S>,
    videos: &[&VideoRecord],
    mut mode: PlanMode<'_, S>,
    pinned_streams: Option<&[(Array1<S>, Array1<S>)]>,
) -> Result<BatchGraph<S>> {
    if videos.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let cfg = &model.config;
    let n_tasks = model.vocab.n_tasks();
    let k_stages = cfg.stages;
    let clamp = S::from_f64_lossy(LOG_CLAMP);
    let center = (cfg.kernel_len as isize - 1) / 2;

    // TF-IDF mask as a constant, transposed to the wc orientation.
    let mask_t = Array2::from_shape_fn((n_tasks, model.vocab.n_attributes()), |(c, j)| {
        S::from_usize(model.tfidf.mask[(j, c)] as usize).unwrap()
    });
    let mask_leaf = tape.leaf(mask_t);
    let masked_wc = tape.mul(pv.wc, mask_leaf);

    let mut plans: Vec<VideoPlan<S>> = Vec::with_capacity(videos.len());
    let mut streams = Vec::with_capacity(videos.len());
    let mut attr_ces = Vec::new();
    let mut task_ces = Vec::new();
    let mut th_ces = Vec::new();
    let mut fuse_ces = Vec::new();

    for (i, video) in videos.iter().enumerate() {
        let total_frames = video.n_frames();
        let window = match &mut mode {
            PlanMode::Record(rng) => window_indices(total_frames, cfg.t_max_frames, true, rng),
            PlanMode::Replay(plans) => plans[i].window.clone(),
        };
        let x = match &window {
            Some(idx) => Array2::from_shape_fn((video.feature_dim(), idx.len()), |(r, c)| {
                S::from_f64_lossy(video.features[(r, idx[c])] as f64)
            }),
            None => video.features.mapv(|v| S::from_f64_lossy(v as f64)),
        };
        let frames = x.ncols();

        let x = tape.leaf(x);
        let xg = tape.matmul(pv.g_weight, x);
        let y = tape.add_col_vec(xg, pv.g_bias);

        // Temporal convolution as a sum of shifted per-tap products.
        let terms: Vec<Var> = (0..cfg.kernel_len)
            .map(|l| {
                let prod = tape.matmul(pv.conv[l], y);
                tape.shift_cols(prod, center - l as isize)
            })
            .collect();
        let phi_pre = add_chain(tape, &terms);

        let dropout = match &mut mode {
            PlanMode::Record(rng) => {
                let dims = tape.value(phi_pre).dim();
                Some(dropout_mask(dims, model.encoder.keep_rate, rng))
            }
            PlanMode::Replay(plans) => plans[i].dropout.clone(),
        };
        let phi = match &dropout {
            Some(mask) => {
                let m = tape.leaf(mask.clone());
                tape.mul(phi_pre, m)
            }
            None => phi_pre,
        };

        // Semantic stream.
        let cam = tape.matmul(pv.attr_weight, phi);
        let cam = tape.add_col_vec(cam, pv.attr_bias);
        let topk = match &mode {
            PlanMode::Record(_) => topk_indices(tape.value(cam), cfg.pool_s),
            PlanMode::Replay(plans) => plans[i].topk.clone(),
        };
        let psi_a = tape.topk_pool(cam, topk.clone());
        let a_w = weighted_attribute_target(video, &model.tfidf)?;
        attr_ces.push(tape.softmax_ce_clamped(psi_a, col(&a_w), clamp));

        let relu_a = tape.relu(psi_a);
        let psi_c = tape.matmul(masked_wc, relu_a);
        let c_one_hot = col(&one_hot::<S>(video.task, n_tasks));
        task_ces.push(tape.softmax_ce_clamped(psi_c, c_one_hot.clone(), clamp));

        // Temporal stream.
        let bounds = stage_bounds(frames, k_stages)?;
        let stage_logit_vars: Vec<Var> = bounds
            .iter()
            .enumerate()
            .map(|(kappa, &(start, end))| {
                let h = tape.mean_cols(phi, start, end);
                let wh = tape.matmul(pv.stage_weights[kappa], h);
                tape.add(wh, pv.stage_biases[kappa])
            })
            .collect();
        for &v in &stage_logit_vars {
            th_ces.push(tape.softmax_ce_clamped(v, c_one_hot.clone(), clamp));
        }

        let gamma = if k_stages >= 2 {
            match &mut mode {
                PlanMode::Record(rng) => Some(rng.random_range(0..k_stages)),
                PlanMode::Replay(plans) => plans[i].gamma,
            }
        } else {
            None
        };
        let masked: Vec<Var> = match gamma {
            Some(dropped) => {
                let keep_scale =
                    S::from_usize(k_stages).unwrap() / S::from_usize(k_stages - 1).unwrap();
                stage_logit_vars
                    .iter()
                    .enumerate()
                    .map(|(kappa, &v)| {
                        let factor = if kappa == dropped { S::zero() } else { keep_scale };
                        tape.scale(v, factor)
                    })
                    .collect()
            }
            None => stage_logit_vars.clone(),
        };
        let relud: Vec<Var> = masked.iter().map(|&v| tape.relu(v)).collect();
        let flat = tape.concat_rows(&relud);
        let theta_total = tape.matmul_tn(pv.w_total, flat);
        th_ces.push(tape.softmax_ce_clamped(theta_total, c_one_hot.clone(), clamp));

        streams.push((
            tape.value(theta_total).column(0).to_owned(),
            tape.value(psi_c).column(0).to_owned(),
        ));

        // Fusion on detached (or externally pinned) stream logits.
        let (f_theta, f_psi) = match pinned_streams {
            Some(pins) => (tape.leaf(col(&pins[i].0)), tape.leaf(col(&pins[i].1))),
            None => (tape.detach(theta_total), tape.detach(psi_c)),
        };
        let fused = match model.fusion.mode {
            FusionMode::Average => {
                let sum = tape.add(f_theta, f_psi);
                tape.scale(sum, S::from_f64_lossy(0.5))
            }
            FusionMode::Weighted => {
                let a = tape.matmul(pv.w1.expect("weighted fusion weights"), f_theta);
                let b = tape.matmul(pv.w2.expect("weighted fusion weights"), f_psi);
                tape.add(a, b)
            }
            FusionMode::Gated => {
                let alpha = tape.sigmoid(pv.w_alpha.expect("gate weights"));
                let inv = tape.one_minus(alpha);
                let a = tape.mul(alpha, f_theta);
                let b = tape.mul(inv, f_psi);
                tape.add(a, b)
            }
        };
        fuse_ces.push(tape.softmax_ce_clamped(fused, c_one_hot, clamp));

        plans.push(VideoPlan { window, dropout, topk, gamma });
    }

    let inv_b = S::one() / S::from_usize(videos.len()).unwrap();
    let lambda = model.shs.lambda;

    let attr_sum = add_chain(tape, &attr_ces);
    let attr_mean = tape.scale(attr_sum, inv_b);
    let task_sum = add_chain(tape, &task_ces);
    let task_mean = tape.scale(task_sum, inv_b);
    let attr_part = tape.scale(attr_mean, lambda);
    let task_part = tape.scale(task_mean, S::one() - lambda);
    let l_sh = tape.add(attr_part, task_part);

    let th_sum = add_chain(tape, &th_ces);
    let l_th = tape.scale(th_sum, inv_b);

    let f_sum = add_chain(tape, &fuse_ces);
    let l_f = tape.scale(f_sum, inv_b);

    let th_scaled = tape.scale(l_th, model.fusion.beta);
    let partial = tape.add(l_f, l_sh);
    let total = tape.add(partial, th_scaled);

    Ok(BatchGraph {
        losses: BatchLosses { l_sh, l_th, l_f, total },
        plans,
        streams,
    })
}

/// Collect gradients for every bound parameter; absent entries mean the loss
/// does not depend on that tensor.
pub fn gradients_by_name<S: Scalar>(
    grads: &Gradients<S>,
    pv: &ParamVars,
) -> BTreeMap<String, Array2<S>> {
    pv.named
        .iter()
        .filter_map(|(name, var)| grads.get(*var).map(|g| (name.clone(), g.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderParams;
    use ndarray::Array1;
    use rand::SeedableRng;

    /// Gradient of the encoding (probed through a fixed random functional)
    /// with respect to every encoder parameter, at the stated instance:
    /// 6-dim input, 8-dim hidden, 4 kernels of length 3, 10 frames.
    #[test]
    fn encode_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_mat =
            |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random::<f64>() - 0.5);
        let g_weight = rand_mat(8, 6);
        let g_bias_col = rand_mat(8, 1);
        let taps: Vec<Array2<f64>> = (0..3).map(|_| rand_mat(4, 8)).collect();
        let x = rand_mat(6, 10);
        let probe = rand_mat(4, 10);

        let build = |tape: &mut Tape<f64>,
                     g_weight: &Array2<f64>,
                     g_bias: &Array2<f64>,
                     taps: &[Array2<f64>]| {
            let gw = tape.leaf(g_weight.clone());
            let gb = tape.leaf(g_bias.clone());
            let tap_vars: Vec<Var> = taps.iter().map(|t| tape.leaf(t.clone())).collect();
            let xv = tape.leaf(x.clone());
            let xg = tape.matmul(gw, xv);
            let y = tape.add_col_vec(xg, gb);
            let terms: Vec<Var> = tap_vars
                .iter()
                .enumerate()
                .map(|(l, &t)| {
                    let prod = tape.matmul(t, y);
                    tape.shift_cols(prod, 1 - l as isize)
                })
                .collect();
            let mut phi = terms[0];
            for &t in &terms[1..] {
                phi = tape.add(phi, t);
            }
            let loss = tape.dot_const(phi, probe.clone());
            (loss, gw, gb, tap_vars)
        };

        let mut tape = Tape::new();
        let (loss, gw, gb, tap_vars) = build(&mut tape, &g_weight, &g_bias_col, &taps);
        let grads = tape.backward(loss);

        let eval = |g_weight: &Array2<f64>, g_bias: &Array2<f64>, taps: &[Array2<f64>]| {
            let mut tape = Tape::new();
            let (loss, ..) = build(&mut tape, g_weight, g_bias, taps);
            tape.scalar_value(loss)
        };

        let h = 1e-4;
        let check = |analytic: &Array2<f64>, numeric: &Array2<f64>, what: &str| {
            let num: f64 =
                analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
            let den: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
                + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
            assert!(num / den.max(1e-12) < 1e-4, "{what}: rel err {}", num / den);
        };

        let mut numeric = Array2::zeros(g_weight.dim());
        for i in 0..g_weight.nrows() {
            for j in 0..g_weight.ncols() {
                let mut p = g_weight.clone();
                p[(i, j)] += h;
                let plus = eval(&p, &g_bias_col, &taps);
                p[(i, j)] -= 2.0 * h;
                let minus = eval(&p, &g_bias_col, &taps);
                numeric[(i, j)] = (plus - minus) / (2.0 * h);
            }
        }
        check(grads.get(gw).unwrap(), &numeric, "g_weight");

        let mut numeric = Array2::zeros(g_bias_col.dim());
        for i in 0..8 {
            let mut p = g_bias_col.clone();
            p[(i, 0)] += h;
            let plus = eval(&g_weight, &p, &taps);
            p[(i, 0)] -= 2.0 * h;
            let minus = eval(&g_weight, &p, &taps);
            numeric[(i, 0)] = (plus - minus) / (2.0 * h);
        }
        check(grads.get(gb).unwrap(), &numeric, "g_bias");

        for l in 0..3 {
            let mut numeric = Array2::zeros(taps[l].dim());
            for i in 0..4 {
                for j in 0..8 {
                    let mut p = taps.to_vec();
                    p[l][(i, j)] += h;
                    let plus = eval(&g_weight, &g_bias_col, &p);
                    p[l][(i, j)] -= 2.0 * h;
                    let minus = eval(&g_weight, &g_bias_col, &p);
                    numeric[(i, j)] = (plus - minus) / (2.0 * h);
                }
            }
            check(grads.get(tap_vars[l]).unwrap(), &numeric, &format!("conv tap {l}"));
        }
        // The tap-major storage matches the plain encoder forward.
        let enc = EncoderParams {
            g_weight: g_weight.clone(),
            g_bias: Array1::from_iter(g_bias_col.column(0).iter().copied()),
            conv_taps: taps.clone(),
            keep_rate: 1.0,
        };
        let mut tape2 = Tape::new();
        let (loss2, ..) = build(&mut tape2, &g_weight, &g_bias_col, &taps);
        let phi_plain = crate::encoder::encode_eval(&x, &enc).unwrap();
        let functional: f64 = phi_plain.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
        assert!((tape2.scalar_value(loss2) - functional).abs() < 1e-10);
    }
}
