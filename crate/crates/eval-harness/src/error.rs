use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("output directory {0} is locked by another run (remove the .lock file if it is stale)")]
    Locked(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Bench(#[from] medvlm_bench::BenchError),
    #[error(transparent)]
    Model(#[from] medvlm_model::ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
