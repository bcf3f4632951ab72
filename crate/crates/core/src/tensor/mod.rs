//! Dense f64 arrays, a reverse-mode differentiation tape, the parameter
//! registry and the AdamW optimizer with its linear schedule.

mod array;
pub mod gradcheck;
pub mod ops;
mod optim;
mod store;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{lr_at, AdamW, OptimizerState, ScheduleConfig};
pub use store::{Parameter, ParameterStore};
pub use tape::{Tape, Tensor};

use thiserror::Error;

/// Label value marking a position that carries no supervision.
pub const IGNORE_INDEX: i64 = -100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {shape:?} ({reason})")]
    Shape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("no supervised positions in batch")]
    NoSupervisedPositions,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParameter(String),
    #[error("missing gradient for trainable parameter {0:?}")]
    MissingGradient(String),
    #[error("invalid schedule: warmup {warmup} exceeds total {total}")]
    InvalidSchedule { warmup: usize, total: usize },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests;
