use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator and the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("emitter index {index} out of range for {count} emitters")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("adaptive step size underflow at t = {t} ns (step {step:e} ns)")]
    StepUnderflow { t: f64, step: f64 },

    #[error("generator is singular or ill-conditioned (pivot {pivot:e})")]
    SingularGenerator { pivot: f64 },

    #[error("steady-state residual {residual:e} exceeds tolerance {tolerance:e}")]
    SteadyStateResidual { residual: f64, tolerance: f64 },

    #[error("evaluation budget exceeded: {requested} ordered evaluations requested, budget is {budget}")]
    BudgetExceeded { requested: u64, budget: u64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty normalization window")]
    EmptyWindow,

    #[error("zero denominator in normalization window")]
    ZeroDenominator,

    #[error("trajectory norm underflow at t = {t} ns; reduce the step size")]
    NormUnderflow { t: f64 },

    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
