//! Differentiable operators: forward and exact backward passes for every
//! layer of the networks, plus the finite-difference oracle.
//!
//! All convolutions use the cross-correlation convention (the kernel is not
//! flipped).

mod activation;
mod conv;
pub mod gradcheck;

use thiserror::Error;

use crate::tensor::{Shape, TensorError};

pub use activation::{
    cross_entropy, max_pool2d, max_pool2d_backward, one_hot, one_hot_index, relu, relu_backward,
    softmax, softmax_cross_entropy_backward, PoolIndices, LOG_EPS,
};
pub use conv::{
    bilinear_kernel, conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvGrads, ConvSpec,
    DeconvSpec,
};
pub use gradcheck::grad_check;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpsError {
    #[error("input has {got} channels, layer expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("kernel {kernel:?} larger than padded input {padded:?}")]
    KernelTooLarge {
        kernel: (usize, usize),
        padded: (usize, usize),
    },
    #[error("expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("crop {crop:?} does not fit raw output {raw:?}")]
    CropOutOfBounds {
        crop: (usize, usize, usize, usize),
        raw: (usize, usize),
    },
    #[error("max-pool needs even extents, got {h}x{w}")]
    OddExtent { h: usize, w: usize },
    #[error("logit {0} is not finite")]
    NonFiniteLogit(usize),
    #[error("softmax needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("label is not one-hot")]
    InvalidLabel,
    #[error("probabilities sum to {0}, not 1")]
    InvalidDistribution(f64),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
