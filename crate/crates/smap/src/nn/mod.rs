//! Minimal dense / 3D-convolutional network engine with reverse-mode
//! differentiation: enough for the descriptor extractor, decoder, classifier
//! and semantic heads, nothing more.

pub mod checkpoint;
mod init;
pub mod layers;
pub mod loss;
mod network;
mod optim;
mod layer_tests;
mod tensor;

pub use init::{xavier_bound, xavier_init};
pub use layers::{Layer, ParamMut};
pub use network::Sequential;
pub use optim::Adam;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    Shape {
        layer: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite activations after layer {index} ({layer})")]
    NonFinite { layer: &'static str, index: usize },
    #[error("backward called on {0} without a cached forward pass")]
    BackwardWithoutForward(&'static str),
    #[error("network contains a concat-scale layer but no aux input was given")]
    MissingAux,
    #[error("reconstruction target is not binary")]
    NonBinaryTarget,
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}
