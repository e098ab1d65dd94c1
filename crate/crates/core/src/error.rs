use thiserror::Error;

use crate::loss::ScalingLawCoefficients;

/// Errors produced by the analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid hardware spec: {0}")]
    InvalidHardware(String),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("invalid scaling-law coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("invalid search space: {0}")]
    InvalidSearchSpace(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing budget: {0}")]
    MissingBudget(String),

    /// A closed-form solution's validity condition does not hold.
    #[error("validity condition violated: {0}")]
    Validity(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("fit did not converge after {iterations} iterations (best SSE {sse:.3e})")]
    NonConvergence {
        iterations: usize,
        sse: f64,
        best: Box<ScalingLawCoefficients>,
    },

    #[error("fixed-point iteration diverged after {iterations} iterations (last relative change {last_change:.3e})")]
    FixedPointDivergence { iterations: usize, last_change: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
