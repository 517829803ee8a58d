use medvlm_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(String),
    #[error("sequence: {0}")]
    Sequence(String),
    #[error("sequence of {len} tokens exceeds the context of {max}")]
    Overlength { len: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
