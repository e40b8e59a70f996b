//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("model file error: {0}")]
    Model(String),
    #[error("mission error: {0}")]
    Mission(String),
}
