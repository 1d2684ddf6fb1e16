use thiserror::Error;

use crate::vmp::FitState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the support of the distribution or function.
    #[error("{what}: value {value} is outside the support")]
    Domain { what: &'static str, value: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid design: {0}")]
    Design(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(&'static str),

    /// The lower bound became non-finite. The full state at the point of
    /// failure is attached for diagnosis.
    #[error("non-finite lower bound at iteration {iteration}")]
    NumericalFailure {
        iteration: usize,
        state: Box<FitState>,
    },

    #[error("warm-up fit on {n_warm} observations did not converge after {iterations} iterations; use a larger warm-up sample")]
    WarmupNotConverged { n_warm: usize, iterations: usize },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn domain(what: &'static str, value: impl ToString) -> Self {
        Error::Domain {
            what,
            value: value.to_string(),
        }
    }
}
