//! Shared feature encoder: per-frame affine layer followed by a temporal
//! convolution with "same" zero padding, plus inverted dropout at train time.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct EncoderParams<S> {
    /// Affine weight, hidden dim x input dim.
    pub g_weight: Array2<S>,
    pub g_bias: Array1<S>,
    /// Temporal convolution stored tap-major: `conv_taps[l]` is the
    /// (kernels x hidden dim) slice applied at offset `l - (L-1)/2`, so the
    /// f-th rows across taps form the f-th L x hidden-dim kernel.
    pub conv_taps: Vec<Array2<S>>,
    /// Dropout keep probability in (0, 1].
    pub keep_rate: S,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn kernel_len(&self) -> usize {
        self.conv_taps.len()
    }

    pub fn input_dim(&self) -> usize {
        self.g_weight.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.g_weight.nrows()
    }

    pub fn encoding_dim(&self) -> usize {
        self.conv_taps[0].nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.conv_taps.len();
        if l == 0 || l.is_multiple_of(2) {
            return Err(Error::Config(format!("encoder kernel length must be odd, got {l}")));
        }
        if self.g_bias.len() != self.hidden_dim() {
            return Err(Error::Config("encoder bias dimension mismatch".into()));
        }
        let shape = self.conv_taps[0].dim();
        if shape.1 != self.hidden_dim() || self.conv_taps.iter().any(|t| t.dim() != shape) {
            return Err(Error::Config("encoder kernel shape mismatch".into()));
        }
        let keep = self.keep_rate.to_f64_lossy();
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Config(format!("keep rate must be in (0, 1], got {keep}")));
        }
        Ok(())
    }
}

/// Per-frame affine map.
pub fn affine<S: Scalar>(x: &Array2<S>, p: &EncoderParams<S>) -> Result<Array2<S>> {
    if x.nrows() != p.input_dim() {
        return Err(Error::Data(format!(
            "encoder: feature dim {} does not match parameters ({})",
            x.nrows(),
            p.input_dim()
        )));
    }
    let mut y = p.g_weight.dot(x);
    for mut col in y.columns_mut() {
        col += &p.g_bias;
    }
    Ok(y)
}

/// Temporal convolution with "same" zero padding, keeping all frames.
pub fn temporal_conv<S: Scalar>(y: &Array2<S>, taps: &[Array2<S>]) -> Array2<S> {
    let center = (taps.len() as isize - 1) / 2;
    let t = y.ncols();
    let f = taps[0].nrows();
    let mut phi = Array2::<S>::zeros((f, t));
    for (l, tap) in taps.iter().enumerate() {
        // phi[:, t] += tap . y[:, t + l - center]
        let shift = center - l as isize;
        let contrib = tap.dot(y);
        for out_col in 0..t as isize {
            let src = out_col - shift;
            if src >= 0 && src < t as isize {
                let mut dst = phi.column_mut(out_col as usize);
                dst += &contrib.column(src as usize);
            }
        }
    }
    phi
}

/// Inverted-dropout mask with entries `1/keep_rate` (kept) or `0` (dropped).
pub fn dropout_mask<S: Scalar, R: Rng>(dim: (usize, usize), keep_rate: S, rng: &mut R) -> Array2<S> {
    let keep = keep_rate.to_f64_lossy();
    let inv = S::one() / keep_rate;
    Array2::from_shape_fn(dim, |_| if rng.random::<f64>() < keep { inv } else { S::zero() })
}

/// Full encoding. Train mode applies inverted dropout drawn from `rng`; eval
/// mode ignores `rng` and is deterministic.
pub fn encode<S: Scalar, R: Rng>(
    x: &Array2<S>,
    p: &EncoderParams<S>,
    train: bool,
    rng: &mut R,
) -> Result<Array2<S>> {
    let y = affine(x, p)?;
    let mut phi = temporal_conv(&y, &p.conv_taps);
    if train {
        let mask = dropout_mask(phi.dim(), p.keep_rate, rng);
        phi = phi * mask;
    }
    Ok(phi)
}

/// Deterministic eval-mode encoding (no dropout).
pub fn encode_eval<S: Scalar>(x: &Array2<S>, p: &EncoderParams<S>) -> Result<Array2<S>> {
    Ok(temporal_conv(&affine(x, p)?, &p.conv_taps))
}
