use thiserror::Error;

use crate::problem::SolveReport;

/// Errors produced by problem validation, the solvers and the file formats.
#[derive(Debug, Error)]
pub enum PotError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("negative entry in {what} at index {index}: {value}")]
    NegativeEntry {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("transported mass {s} outside [0, {limit}]")]
    MassOutOfRange { s: f64, limit: f64 },

    #[error("dummy cost {a_val} must exceed the largest cost entry {c_max}")]
    DummyCostTooSmall { a_val: f64, c_max: f64 },

    #[error("normalization constant {d} must be positive")]
    DegenerateMass { d: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        /// The last iterate, packaged as a report so callers can still
        /// inspect the trace.
        report: Option<Box<SolveReport>>,
    },

    #[error("line search stalled: smoothness estimate reached {m:e}")]
    LineSearchStall { m: f64 },

    #[error("iteration budget exceeded: {required} iterations required, cap is {cap}")]
    IterationBudgetExceeded { required: u64, cap: u64 },

    #[error("problem size {n} exceeds the exact solver limit {limit}")]
    SizeLimitExceeded { n: usize, limit: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl PotError {
    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            PotError::DimensionMismatch { .. } => "dimension_mismatch",
            PotError::NegativeEntry { .. } => "negative_entry",
            PotError::NonFinite { .. } => "non_finite",
            PotError::MassOutOfRange { .. } => "mass_out_of_range",
            PotError::DummyCostTooSmall { .. } => "dummy_cost_too_small",
            PotError::DegenerateMass { .. } => "degenerate_mass",
            PotError::InvalidParameter(_) => "invalid_parameter",
            PotError::NotConverged { .. } => "not_converged",
            PotError::LineSearchStall { .. } => "line_search_stall",
            PotError::IterationBudgetExceeded { .. } => "iteration_budget_exceeded",
            PotError::SizeLimitExceeded { .. } => "size_limit_exceeded",
            PotError::Parse { .. } => "parse",
            PotError::Io(_) => "io",
            PotError::Internal(_) => "internal",
        }
    }

    /// Consumes a `NotConverged` error and returns the partial report it
    /// carries, if any.
    pub fn into_partial_report(self) -> Option<SolveReport> {
        match self {
            PotError::NotConverged { report, .. } => report.map(|r| *r),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, PotError>;
