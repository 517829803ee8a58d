use medvlm_model::ModelError;
use medvlm_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset `{0}` is not available")]
    MissingDataset(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss in stage {stage} at step {step} (batch items {items:?})")]
    NonFinite {
        stage: String,
        step: u64,
        items: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Configuration problems, as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            TrainError::Config(_)
                | TrainError::MissingDataset(_)
                | TrainError::Model(ModelError::Config(_))
                | TrainError::Nn(NnError::Config(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
