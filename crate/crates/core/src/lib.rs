//! Two-stream hierarchical task recognition for weakly-labeled sequential
//! feature corpora, with top-down grammar-constrained action segmentation.
//!
//! The library is generic over the scalar type: `f32` is the training and
//! checkpoint scalar (matching the on-disk formats), `f64` is used by the
//! finite-difference gradient checks and the segmentation decoder.

pub mod autodiff;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod scalar;
pub mod segment;
pub mod shs;
pub mod tfidf;
pub mod ths;
pub mod training;
mod util;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model in the training/checkpoint scalar.
pub type ModelF32 = training::ModelParams<f32>;
/// Model in the gradient-check scalar.
pub type ModelF64 = training::ModelParams<f64>;
