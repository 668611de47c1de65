//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! Every forward op validates shapes and rejects non-finite results, so a loss
//! blowup surfaces as an error at the op that produced it.

mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use gradcheck::{GradCheck, GradCheckReport, LeafCheck};
pub use graph::{Graph, Op, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} expects {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: row {row} is a zero vector")]
    ZeroVector { op: &'static str, row: usize },
    #[error("{op}: index {index} out of range for {bound}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Self::ShapeMismatch { op, detail }
    }

    pub(crate) fn arity(op: &'static str, expected: usize, got: usize) -> Self {
        Self::Arity { op, expected, got }
    }
}
