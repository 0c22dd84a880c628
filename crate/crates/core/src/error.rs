use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Every variant maps onto one CLI exit class; see [`Error::exit_code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("sizing: {what} needs {requested} but the cap is {cap}")]
    Sizing {
        what: &'static str,
        requested: f64,
        cap: f64,
    },
    #[error("window mismatch: {0}")]
    WindowMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("clipped mass {defect:.3e} exceeds the bound {bound:.3e}")]
    ClipDefectExceeded { defect: f64, bound: f64 },
    #[error("inconsistent marginals: {0}")]
    InconsistentMarginals(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Sizing { .. } => 3,
            Error::NonConvergence(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
