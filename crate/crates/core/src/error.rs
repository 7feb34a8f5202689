//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
///
/// The variants map onto the CLI exit-code classes: `Config` and `Domain`
/// are usage errors, `Fit`/`Simulation`/`Degenerate` are estimation
/// failures, `Data` covers file and schema problems.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a mathematical precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or incomplete configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The trial sampler could not produce a first passage.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// An optimizer diverged or a fit could not be completed.
    #[error("fit error: {0}")]
    Fit(String),

    /// Malformed input data or I/O failure.
    #[error("data error: {0}")]
    Data(String),

    /// A matrix required by an estimator is numerically singular.
    #[error("degenerate matrix: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn fit(msg: impl Into<String>) -> Self {
        Error::Fit(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(e.to_string())
    }
}
