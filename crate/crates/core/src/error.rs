//! Crate-wide error type.

use crate::optimizer::OptimizationReport;
use crate::state::NewtonReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("linear solver failure: {reason} (achieved relative residual {achieved:.3e})")]
    SolverFailure { reason: String, achieved: f64 },

    #[error(
        "nonlinear solve did not converge: {iterations} iterations, last residual {last_residual:.3e}"
    )]
    Nonconvergence {
        iterations: usize,
        last_residual: f64,
        report: Box<NewtonReport>,
    },

    #[error("continuation failed at stage {stage} (ramp {ramp}): {source}")]
    ContinuationFailure {
        stage: usize,
        ramp: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("line search stagnated (step {step:.3e} below 1e-14)")]
    Stagnation {
        step: f64,
        report: Box<OptimizationReport>,
    },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("verification check failed: {0}")]
    CheckFailed(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
