use thiserror::Error;

/// Errors raised by the solver, its models and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, missing scheme data, invalid settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values, failed factorizations, divergent quadrature.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An argument outside the domain of a function (e.g. a nonpositive resistivity).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation requested on input it does not support.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
