//! Reverse-mode differentiation over dense `f64` arrays.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_multi, GradcheckReport};
pub use tape::{CustomBackward, Tape, Var, DEGENERATE_NORM};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("degenerate embedding: vector {index} has norm {norm:e}")]
    DegenerateNorm { index: usize, norm: f64 },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
