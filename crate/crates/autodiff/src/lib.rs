//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value, and [`Graph::backward`] walks the tape in reverse, accumulating
//! gradients into every node that depends on a differentiable leaf.
//!
//! The operation set is deliberately small. It covers what a convolutional +
//! recurrent variational encoder and a feed-forward classifier need:
//! matmul, broadcasting add/mul, concat/slice/reshape/transpose, 1-D
//! convolution, adaptive mean pooling over time, nearest-neighbour
//! upsampling, a fused GRU cell, pointwise nonlinearities, reductions, and
//! three fused losses (MSE, Gaussian KL, binary cross-entropy).

mod adam;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{CustomBackward, Graph, Var};
pub use params::{BoundParams, ParamId, ParamSet};
pub use tensor::Tensor;

/// Lower clamp applied to probabilities inside [`Graph::bce`].
pub const BCE_CLAMP: f64 = 1e-7;
