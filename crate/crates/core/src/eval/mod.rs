//! Metrics, seed aggregation and gate-weight reports.

mod gate_report;
mod metrics;


pub use gate_report::{gate_report, GateReport};
pub use metrics::{
    accuracy, aggregate_seeds, macro_f1, metrics, micro_f1, pearson, Metric, MetricReport, Predictions, SeedAggregate,
    TaskFamily,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {preds} predictions vs {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("{0} needs at least {1} values")]
    TooFew(&'static str, usize),
    #[error("correlation is undefined for a constant vector")]
    ConstantVector,
    #[error("metric {metric} expects {expected} outputs, got {got}")]
    TaskMismatch {
        metric: &'static str,
        expected: &'static str,
        got: &'static str,
    },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
