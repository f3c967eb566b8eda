//! Deeply supervised fully-convolutional classification with embedded class
//! activation maps (eCAM).
//!
//! Every backbone scale carries a per-class attention map that is upsampled to
//! the input resolution and supervised through global average pooling; a
//! learnt 1x1 convolution fuses the scales into the map the final prediction
//! is read from. A classic single-CAM baseline is built from the same
//! configuration for comparison.
//!
//! Modules, bottom up:
//! - [`tensor`]: dense `(n, c, h, w)` arrays.
//! - [`ops`]: convolution, transposed convolution, pooling, softmax and
//!   cross-entropy with exact gradients, and the finite-difference oracle.
//! - [`net`]: both architectures, the multi-scale loss and heatmap extraction.
//! - [`optim`]: SGD with momentum and the checkpoint format.
//! - [`data`]: fold manifests, PPM/PGM IO and the synthetic dataset.
//! - [`engine`]: training protocol, metrics, inference and the oracle suite.

pub mod data;
pub mod engine;
pub mod error;
pub mod net;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use net::{Arch, Heatmap, Network, NetworkConfig, ScaleOutputs, ScaleTag};
pub use tensor::{Scalar, Shape, Tensor};
