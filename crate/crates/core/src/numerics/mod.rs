//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Every learnable operation of the model is expressed against the
//! [`Backend`] trait, implemented by [`Eager`] for inference and by
//! [`Graph`] when gradients are needed.

mod backend;
mod graph;
pub mod kernels;
pub mod ops;
mod params;
mod tensor;

pub use backend::{Backend, Eager};
pub use graph::{Gradients, Graph, Var};
pub use kernels::Discretization;
pub use ops::{
    batch_norm, cross_entropy, depthwise_causal_conv1d, layer_norm, matmul, sigmoid, silu, softmax,
    softplus, BatchNormMode, BatchStats, RunningStats, ScanInputs, Unary,
};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
