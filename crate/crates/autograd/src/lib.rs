//! A small tape-based reverse-mode autodiff engine over dense `f64` tensors.
//!
//! Operations are coarse (convolution, normalisation, softmax cross-entropy)
//! so that tape overhead stays negligible next to the arithmetic. Custom
//! kernels plug in through [`CustomOp`].

pub mod check;
pub mod gemm;
mod graph;
pub mod ops;
mod params;
mod tensor;

pub use graph::{CustomOp, Gradients, Graph, Var};
pub use ops::{concat, sigmoid, softplus, BatchStats, Conv2dSpec};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    ElementCount { shape: Vec<usize>, len: usize },
}
