//! Exit-code classification.

use medvlm_curriculum::TrainError;
use medvlm_eval::EvalError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_OVERLAP: u8 = 3;

/// A problem with flags or configuration files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Config(_) | EvalError::UnknownTemplate(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}
