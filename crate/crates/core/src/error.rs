use thiserror::Error;

/// Errors raised by the inference engine and its models.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument lies outside the support of a distribution.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix could not be factorized, even after jitter.
    #[error("singular covariance: {0}")]
    Singular(String),

    /// Inconsistent or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced a non-finite value where one is not allowed.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorKind::Data,
            Error::Domain(_) | Error::Singular(_) | Error::Numerical(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
