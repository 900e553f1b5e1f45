use thiserror::Error;

/// Errors produced by the key-rate engines, source inversions and ingest.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QkdError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid photon-number distribution: {0}")]
    InvalidDistribution(String),

    #[error("inconsistent observables: {0}")]
    InconsistentObservables(String),

    #[error("infeasible inversion: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate decoy pair: determinant {det:e} is below {tol:e}")]
    DegenerateDecoy { det: f64, tol: f64 },

    #[error("inconsistent data: {0}")]
    InconsistentData(String),

    #[error("no secure key at zero channel loss")]
    NoKey,

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("fit failed after {iterations} iterations: {reason}")]
    FitFailed { iterations: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, QkdError>;

impl From<std::io::Error> for QkdError {
    fn from(e: std::io::Error) -> Self {
        QkdError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for QkdError {
    fn from(e: serde_json::Error) -> Self {
        QkdError::Parse(e.to_string())
    }
}

impl From<csv::Error> for QkdError {
    fn from(e: csv::Error) -> Self {
        QkdError::Parse(e.to_string())
    }
}

/// Checks that `value` is a probability, naming it in the error.
pub(crate) fn check_probability(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || value.is_nan() {
        return Err(QkdError::Domain(format!(
            "{name} = {value} is not in [0, 1]"
        )));
    }
    Ok(())
}
