//! Tensors, reverse-mode autodiff, AdamW, scalar schedules and gradient
//! clipping.

mod optim;
mod schedule;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use schedule::{Schedule, ScheduleKind};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use std::collections::BTreeMap;

use thiserror::Error;

/// Named parameter tensors in a stable (sorted) order.
pub type ParamSet = BTreeMap<String, Tensor>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("no optimizer state or gradient for parameter {0}")]
    UnknownParam(String),
}
