//! The full parameter set: both streams, fusion, the optional auxiliary
//! frame-classifier head, and the frozen corpus snapshots (vocabulary, TF-IDF
//! tables, segmentation statistics) that decoding needs at test time.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::corpus::Vocabularies;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, FusionParams};
use crate::scalar::Scalar;
use crate::shs::ShsParams;
use crate::tfidf::TfidfTables;
use crate::ths::ThsParams;

/// Frame-classifier head over the full action vocabulary (background row 0).
#[derive(Debug, Clone)]
pub struct ActionHead<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

/// Corpus statistics fitted at train time and carried in the checkpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SegStats {
    /// Uniform-alignment log-prior per action (background included).
    pub log_prior: Vec<f64>,
    /// Poisson duration mean per action.
    pub duration_lambda: Vec<f64>,
    pub has_background: bool,
}

impl SegStats {
    pub fn is_fitted(&self) -> bool {
        !self.log_prior.is_empty() && !self.duration_lambda.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub encoder: EncoderParams<S>,
    pub shs: ShsParams<S>,
    pub ths: ThsParams<S>,
    pub fusion: FusionParams<S>,
    /// Frame-classifier head fit with uniform-alignment pseudo-labels after
    /// the main loop; the default frame-posterior source.
    pub action_head: Option<ActionHead<S>>,
    pub vocab: Vocabularies,
    pub tfidf: TfidfTables<S>,
    pub seg_stats: SegStats,
    pub config: TrainConfig,
}

/// Borrowed view of one named tensor.
pub enum TensorView<'a, S> {
    Mat(&'a Array2<S>),
    Col(&'a Array1<S>),
}

pub enum TensorViewMut<'a, S> {
    Mat(&'a mut Array2<S>),
    Col(&'a mut Array1<S>),
}

impl<S: Scalar> TensorView<'_, S> {
    pub fn len(&self) -> usize {
        match self {
            TensorView::Mat(m) => m.len(),
            TensorView::Col(v) => v.len(),
        }
    }

    /// Flat row-major accessor.
    pub fn get(&self, i: usize) -> S {
        match self {
            TensorView::Mat(m) => m[(i / m.ncols(), i % m.ncols())],
            TensorView::Col(v) => v[i],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy into column-shaped matrix form (vectors become (n, 1)).
    pub fn to_matrix(&self) -> Array2<S> {
        match self {
            TensorView::Mat(m) => (*m).clone(),
            TensorView::Col(v) => (*v).clone().insert_axis(ndarray::Axis(1)),
        }
    }
}

impl<S: Scalar> TensorViewMut<'_, S> {
    pub fn len(&self) -> usize {
        match self {
            TensorViewMut::Mat(m) => m.len(),
            TensorViewMut::Col(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat row-major accessors, used by the optimizer and the finite
    /// difference harness.
    pub fn get(&self, i: usize) -> S {
        match self {
            TensorViewMut::Mat(m) => m[(i / m.ncols(), i % m.ncols())],
            TensorViewMut::Col(v) => v[i],
        }
    }

    pub fn set(&mut self, i: usize, value: S) {
        match self {
            TensorViewMut::Mat(m) => {
                let c = m.ncols();
                m[(i / c, i % c)] = value;
            }
            TensorViewMut::Col(v) => v[i] = value,
        }
    }
}

fn uniform_fan_in<S: Scalar>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<S> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        S::from_f64_lossy((rng.random::<f64>() * 2.0 - 1.0) * scale)
    })
}

impl<S: Scalar> ModelParams<S> {
    /// Seeded initialization: affine weights uniform in
    /// [-1, 1] / sqrt(fan-in), biases zero, gate weights zero.
    pub fn init(
        vocab: Vocabularies,
        tfidf: TfidfTables<S>,
        cfg: &TrainConfig,
        feature_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let n_tasks = vocab.n_tasks();
        let n_attrs = vocab.n_attributes();
        if tfidf.n_attributes() != n_attrs || tfidf.n_tasks() != n_tasks {
            return Err(Error::Data("TF-IDF tables do not match the vocabulary".into()));
        }

        let f_hidden = cfg.hidden_dim;
        let f_enc = cfg.enc_dim;
        let l = cfg.kernel_len;
        let encoder = EncoderParams {
            g_weight: uniform_fan_in(f_hidden, feature_dim, feature_dim, rng),
            g_bias: Array1::zeros(f_hidden),
            conv_taps: (0..l)
                .map(|_| uniform_fan_in(f_enc, f_hidden, l * f_hidden, rng))
                .collect(),
            keep_rate: S::from_f64_lossy(cfg.keep_rate),
        };
        encoder.validate()?;

        let shs = ShsParams {
            attr_weight: uniform_fan_in(n_attrs, f_enc, f_enc, rng),
            attr_bias: Array1::zeros(n_attrs),
            wc: uniform_fan_in(n_tasks, n_attrs, n_attrs, rng),
            s: cfg.pool_s,
            lambda: S::from_f64_lossy(cfg.lambda),
        };
        shs.validate()?;

        let k = cfg.stages;
        let ths = ThsParams {
            stage_weights: (0..k).map(|_| uniform_fan_in(n_tasks, f_enc, f_enc, rng)).collect(),
            stage_biases: (0..k).map(|_| Array1::zeros(n_tasks)).collect(),
            w_total: uniform_fan_in(k * n_tasks, n_tasks, k * n_tasks, rng),
        };
        ths.validate()?;

        let fusion = match cfg.fusion {
            FusionMode::Average => FusionParams {
                mode: FusionMode::Average,
                w1: None,
                w2: None,
                w_alpha: None,
                beta: S::from_f64_lossy(cfg.beta),
            },
            FusionMode::Weighted => FusionParams {
                mode: FusionMode::Weighted,
                w1: Some(uniform_fan_in(n_tasks, n_tasks, n_tasks, rng)),
                w2: Some(uniform_fan_in(n_tasks, n_tasks, n_tasks, rng)),
                w_alpha: None,
                beta: S::from_f64_lossy(cfg.beta),
            },
            FusionMode::Gated => FusionParams {
                mode: FusionMode::Gated,
                w1: None,
                w2: None,
                w_alpha: Some(Array1::zeros(n_tasks)),
                beta: S::from_f64_lossy(cfg.beta),
            },
        };
        fusion.validate(n_tasks)?;

        // The head is always present: it is the default frame-posterior
        // source, and the only possible one under a verb/object
        // decomposition.
        let action_head = Some(ActionHead {
            weight: uniform_fan_in(vocab.n_actions(), f_enc, f_enc, rng),
            bias: Array1::zeros(vocab.n_actions()),
        });

        Ok(ModelParams {
            encoder,
            shs,
            ths,
            fusion,
            action_head,
            vocab,
            tfidf,
            seg_stats: SegStats::default(),
            config: cfg.clone(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Visit the main-loop trainable tensors in a fixed order. The auxiliary
    /// action head is trained in its own phase and not included here.
    pub fn visit_trainable<'a, F: FnMut(String, TensorView<'a, S>)>(&'a self, mut f: F) {
        f("encoder.g_weight".into(), TensorView::Mat(&self.encoder.g_weight));
        f("encoder.g_bias".into(), TensorView::Col(&self.encoder.g_bias));
        for (l, tap) in self.encoder.conv_taps.iter().enumerate() {
            f(format!("encoder.conv.{l:02}"), TensorView::Mat(tap));
        }
        f("shs.attr_weight".into(), TensorView::Mat(&self.shs.attr_weight));
        f("shs.attr_bias".into(), TensorView::Col(&self.shs.attr_bias));
        f("shs.wc".into(), TensorView::Mat(&self.shs.wc));
        for (k, w) in self.ths.stage_weights.iter().enumerate() {
            f(format!("ths.stage_weight.{k:02}"), TensorView::Mat(w));
        }
        for (k, b) in self.ths.stage_biases.iter().enumerate() {
            f(format!("ths.stage_bias.{k:02}"), TensorView::Col(b));
        }
        f("ths.w_total".into(), TensorView::Mat(&self.ths.w_total));
        if let Some(w1) = &self.fusion.w1 {
            f("fusion.w1".into(), TensorView::Mat(w1));
        }
        if let Some(w2) = &self.fusion.w2 {
            f("fusion.w2".into(), TensorView::Mat(w2));
        }
        if let Some(w_alpha) = &self.fusion.w_alpha {
            f("fusion.w_alpha".into(), TensorView::Col(w_alpha));
        }
    }

    pub fn visit_trainable_mut<F: FnMut(String, TensorViewMut<S>)>(&mut self, mut f: F) {
        f("encoder.g_weight".into(), TensorViewMut::Mat(&mut self.encoder.g_weight));
        f("encoder.g_bias".into(), TensorViewMut::Col(&mut self.encoder.g_bias));
        for (l, tap) in self.encoder.conv_taps.iter_mut().enumerate() {
            f(format!("encoder.conv.{l:02}"), TensorViewMut::Mat(tap));
        }
        f("shs.attr_weight".into(), TensorViewMut::Mat(&mut self.shs.attr_weight));
        f("shs.attr_bias".into(), TensorViewMut::Col(&mut self.shs.attr_bias));
        f("shs.wc".into(), TensorViewMut::Mat(&mut self.shs.wc));
        for (k, w) in self.ths.stage_weights.iter_mut().enumerate() {
            f(format!("ths.stage_weight.{k:02}"), TensorViewMut::Mat(w));
        }
        for (k, b) in self.ths.stage_biases.iter_mut().enumerate() {
            f(format!("ths.stage_bias.{k:02}"), TensorViewMut::Col(b));
        }
        f("ths.w_total".into(), TensorViewMut::Mat(&mut self.ths.w_total));
        if let Some(w1) = &mut self.fusion.w1 {
            f("fusion.w1".into(), TensorViewMut::Mat(w1));
        }
        if let Some(w2) = &mut self.fusion.w2 {
            f("fusion.w2".into(), TensorViewMut::Mat(w2));
        }
        if let Some(w_alpha) = &mut self.fusion.w_alpha {
            f("fusion.w_alpha".into(), TensorViewMut::Col(w_alpha));
        }
    }

    /// Names of the trainable tensors, in visitation order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_trainable(|name, _| names.push(name));
        names
    }

    /// Deterministic eval-mode forward pass over a full video.
    pub fn evaluate(&self, features: &Array2<f32>) -> Result<EvalOutputs<S>> {
        let x = features.mapv(|v| S::from_f64_lossy(v as f64));
        let phi = crate::encoder::encode_eval(&x, &self.encoder)?;
        let shs = crate::shs::forward(&phi, &self.shs, &self.tfidf.mask)?;
        let ths = crate::ths::forward_eval(&phi, &self.ths)?;
        let (fused_logits, fused_probs) = crate::fusion::fuse(
            &ths.total_logits,
            &shs.psi_c_logits,
            &self.fusion,
            crate::fusion::Phase::Eval,
        )?;
        Ok(EvalOutputs { phi, shs, ths, fused_logits, fused_probs })
    }

    /// Eval-mode task prediction.
    pub fn predict_task(&self, features: &Array2<f32>) -> Result<usize> {
        let out = self.evaluate(features)?;
        Ok(crate::fusion::predict_task(&out.fused_probs))
    }
}

/// Everything the eval-mode forward pass produces for one video.
#[derive(Debug, Clone)]
pub struct EvalOutputs<S> {
    pub phi: Array2<S>,
    pub shs: crate::shs::ShsOutputs<S>,
    pub ths: crate::ths::ThsOutputs<S>,
    pub fused_logits: Array1<S>,
    pub fused_probs: Array1<S>,
}
