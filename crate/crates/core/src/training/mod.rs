//! Differentiation, optimization, the training loop, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod run;
pub mod window;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{PosteriorSource, TrainConfig};
pub use model::{ActionHead, EvalOutputs, ModelParams, SegStats, TensorView, TensorViewMut};
pub use run::{train, LossRow};
pub use window::window_indices;
