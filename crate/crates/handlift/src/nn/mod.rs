//! Minimal reverse-mode automatic differentiation engine.
//!
//! The engine supports exactly the layer set the architectures need:
//! convolution, ReLU, max pooling, fully-connected, dropout, concatenation,
//! bilinear upsampling and reshape. Networks are ordered layer tables
//! ([`NetworkSpec`]); execution is single-sample with batching handled by
//! the caller, which keeps results independent of worker count.
//!
//! Precision contract: training runs in `f32` (matching the checkpoint
//! encoding exactly, so save/resume is bit-transparent); gradient
//! verification runs in `f64` against central finite differences.

mod adam;
mod gradcheck;
pub mod layers;
mod loss;
mod network;
mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport};
pub use layers::{DropoutKey, LayerRef, LayerSpec};
pub use loss::{l2_loss, softmax_cross_entropy};
pub use network::{ForwardPass, Gradients, LayerParams, Mode, Network, NetworkSpec};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
}
