use refinegan_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a cached training forward pass")]
    NoCache,
    #[error("checkpoint config mismatch for `{name}`: stored {stored}, expected {expected}")]
    ConfigMismatch { name: String, stored: String, expected: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
