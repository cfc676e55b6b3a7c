//! Dense f64 tensors with a dynamic tape for reverse-mode differentiation.
//!
//! Every operation is recorded on a [`Graph`] in creation order. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and leaves
//! `∂loss/∂leaf` on each leaf that requires a gradient. Kernels are
//! single-threaded and deterministic: identical inputs give bit-identical
//! values and gradients.

mod error;
mod gemm;
pub mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
