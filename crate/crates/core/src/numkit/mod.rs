//! Dense `f64` tensors, a define-by-run reverse-mode tape, and a central
//! finite-difference gradient oracle.
//!
//! There is no broadcasting: elementwise operations require identical shapes
//! and bias rows are expanded explicitly with [`Tape::tile_rows`].

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: domain error, {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("shape {shape:?} does not describe {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("slice of {len} at {start} on axis {axis} out of bounds for shape {shape:?}")]
    SliceBounds {
        axis: usize,
        start: usize,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("row index {index} out of range for {rows} rows")]
    Index { index: usize, rows: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite function value {value} at {at}")]
    NonFinite { value: f64, at: String },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}
