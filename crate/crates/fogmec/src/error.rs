use thiserror::Error;

/// Errors raised by the model, the solvers and the scenario tooling.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("root finder failed: {0}")]
    RootFinder(String),
}

impl Error {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_invalid_input(&self) -> bool {
        matches!(self, Error::InvalidScenario(_) | Error::InvalidConfig(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
