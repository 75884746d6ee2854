use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command-line front end to pick an exit
/// code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Certification,
    Verification,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("numerical failure in {context} (condition estimate {condition:.3e})")]
    NumericalFailure { context: String, condition: f64 },

    #[error(
        "ordering violated: expected Y - Z to be positive semi-definite, smallest eigenvalue {min_eigenvalue:.6e}"
    )]
    OrderingViolation { min_eigenvalue: f64 },

    #[error("index {index} outside of the available window of length {len}")]
    IndexOutOfWindow { index: usize, len: usize },

    #[error("no lifting depth up to {d_max} is uniformly controllable and observable (first failure at base index {failing_k})")]
    NoUniformD { d_max: usize, failing_k: usize },

    #[error("lifting margin {margin} = {value:.6e} at lifted step {step} is not above tolerance")]
    MarginViolation {
        margin: &'static str,
        value: f64,
        step: usize,
    },

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("certification failure{}: {reason}", index.map(|i| format!(" at lifted step {i}")).unwrap_or_default())]
    Certification { reason: String, index: Option<usize> },

    #[error("window of {available} lifted steps is too short: {required} are needed")]
    InsufficientPreview { required: usize, available: usize },

    #[error("closed loop diverged at lifted step {step} (|x| = {norm:.3e})")]
    Divergence { step: usize, norm: f64 },

    #[error("unlifted trajectory disagrees with lifted state at lifted step {step} (residual {residual:.3e})")]
    LiftingConsistency { step: usize, residual: f64 },

    #[error("stacked problem of size {size} exceeds cap {cap}")]
    StackTooLarge { size: usize, cap: usize },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidProblem(_)
            | Error::InvalidArgument(_)
            | Error::IndexOutOfWindow { .. }
            | Error::InsufficientPreview { .. }
            | Error::StackTooLarge { .. }
            | Error::Schema { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Input,
            Error::NoUniformD { .. } | Error::MarginViolation { .. } | Error::Certification { .. } => {
                ErrorClass::Certification
            }
            Error::Divergence { .. } | Error::LiftingConsistency { .. } | Error::Verification(_) => {
                ErrorClass::Verification
            }
            Error::NotSymmetric { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::NonFinite
            | Error::NumericalFailure { .. }
            | Error::OrderingViolation { .. } => ErrorClass::Numerical,
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn numerical(context: impl Into<String>, condition: f64) -> Self {
        Error::NumericalFailure {
            context: context.into(),
            condition,
        }
    }

    pub(crate) fn certification(reason: impl Into<String>, index: Option<usize>) -> Self {
        Error::Certification {
            reason: reason.into(),
            index,
        }
    }
}
