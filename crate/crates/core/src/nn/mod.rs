//! Minimal feed-forward network kernel: forward, analytic backward, momentum SGD.

pub mod checkpoint;
mod layer;
pub mod loss;
mod network;
mod sgd;
mod tensor;

pub use layer::LayerSpec;
pub use loss::{distill_loss, weighted_selector_loss, DistillParams, LossGrad};
pub use network::{Grads, Network, Tape};
pub use sgd::{fit, FitReport, Sgd, TrainConfig};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid shape {0}")]
    InvalidShape(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward called without a recorded forward pass")]
    NoForwardPass,
    #[error("recorded forward pass does not belong to this network")]
    TapeMismatch,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
