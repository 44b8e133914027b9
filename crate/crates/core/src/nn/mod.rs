//! Tensor engine with hand-written adjoints and the encoder-decoder network.

pub mod checkpoint;
pub mod network;
pub mod ops;
pub mod receptive;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use network::{
    backward, forward, forward_with_hook, predict, update_running_stats, ForwardCache, Gradients,
    LayerKind, LayerParams, LayerSpec, Mode, NetworkSpec, Parameters,
};
pub use receptive::{receptive_field, ReceptiveFieldReport};
pub use tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pooling needs even dimensions, got {h}x{w}")]
    NonDivisibleDims { h: usize, w: usize },
    #[error("batch statistics need at least 2 values per channel, got {elements}")]
    DegenerateBatch { elements: usize },
    #[error("non-finite value after layer {layer}")]
    NaNDetected { layer: usize },
    #[error("cache does not match the network: {0}")]
    CacheMismatch(String),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
}
