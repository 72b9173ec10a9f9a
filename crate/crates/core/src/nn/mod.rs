//! From-scratch CNN building blocks: tensors, layers with exact backward
//! passes, softmax cross-entropy and SGD with Nesterov momentum.

mod activation;
mod batchnorm;
mod checkpoint;
mod conv;
mod dense;
pub mod gradcheck;
mod loss;
mod network;
mod optim;
mod pool;
mod scalar;
mod tensor;

pub use activation::{dropout_forward, relu_backward, relu_forward, Dropout, Relu};
pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d};
pub use dense::{dense_backward, dense_forward, Dense};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{Layer, LayerSpec, Network};
pub use optim::{lr_schedule, LrProfile, OptimizerState, ParamRef, INITIAL_LR, L2_COEFFICIENT, MOMENTUM};
pub use pool::{ceil_pool_len, maxpool_backward, maxpool_forward, MaxPool2d, PoolCache};
pub use scalar::{matmul, Scalar};
pub use tensor::Tensor;

/// Gradients with respect to `(input, weight, bias)`.
pub type Grads<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("rank mismatch: expected rank {expected}, found shape {found:?}")]
    RankMismatch { expected: usize, found: Vec<usize> },
    #[error("{0} backward called without a cached train-mode forward")]
    NoForwardCache(&'static str),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
