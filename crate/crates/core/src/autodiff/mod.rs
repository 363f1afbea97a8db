//! Tape-based reverse-mode differentiation over dense row-major tensors.

pub mod gradcheck;
mod graph;
pub mod nn;
mod tensor;

pub use graph::{AutodiffError, BatchNormMode, BatchStats, Graph, Var};
pub use tensor::{DType, Real, Tensor};
