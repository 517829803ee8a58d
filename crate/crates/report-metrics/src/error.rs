use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MetricError>;
