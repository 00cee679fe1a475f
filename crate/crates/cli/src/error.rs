use recursive_bayes::{Error, ErrorKind};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => ErrorKind::Config,
            CliError::Data(_) => ErrorKind::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            exit_code: i32,
            message: String,
        }
        let error = match self.kind() {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        };
        serde_json::to_string(&Report {
            error,
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .unwrap_or_else(|_| format!("{{\"error\":\"{error}\"}}"))
    }
}
