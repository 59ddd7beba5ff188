//! Desk-scale trainable conversion stack with hand-derived analytic
//! gradients.
//!
//! The trunk is convolution -> recurrence -> dense: Conv1D over time with
//! ReLU, a unidirectional GRU, and a linear output layer mapping to the
//! 80-dimensional log-mel target. The optional visual branch fuses
//! multi-layer extractor features with learnable softmax weights and, in
//! fine-tuning mode, passes them through a second unidirectional GRU of
//! the same dimensionality before frame-wise concatenation with the
//! acoustic input.
//!
//! Everything is float64 and deterministic given a seed; every gradient
//! is verified against central finite differences (see [`gradcheck`]).

mod checkpoint;
mod gradcheck;
mod layers;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport, GRADCHECK_STEP, GRADCHECK_TOL};
pub use layers::{Conv1dParams, GruCache, GruParams, LinearParams};
pub use model::{
    backward, build_model, forward, forward_masked, ForwardCache, Mode, ModelConfig,
    ModelParameters,
};
pub use train::{convert, sse_and_grad, train, TrainConfig, TrainSample, TrainedModel};

use thiserror::Error;

use crate::io::IoError;
use crate::visual::VisualError;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("bad dimension: {0}")]
    BadDim(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Visual(#[from] VisualError),
}
