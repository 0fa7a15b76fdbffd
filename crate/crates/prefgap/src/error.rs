use thiserror::Error;

/// Failures of the harness, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum AppError {
    /// A claimed inequality or identity did not hold.
    #[error("claim failed: {0}")]
    Claim(String),
    #[error("numeric failure: {0}")]
    Numeric(#[from] prefgap_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad input: {0}")]
    Schema(String),
    #[error("{0}")]
    Usage(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Claim(_) => 2,
            AppError::Numeric(_) => 3,
            AppError::Io(_) | AppError::Schema(_) | AppError::Usage(_) => 4,
        }
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Schema(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Schema(e.to_string())
    }
}
