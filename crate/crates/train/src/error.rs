use refinegan_core::CoreError;
use refinegan_nets::NetError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("diverged at step {step}: {what} is not finite")]
    Divergence { step: usize, what: String },
    #[error("non-finite gradient in parameter tensor {0}")]
    NonFiniteGradient(usize),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

impl TrainError {
    /// True for non-finite losses or gradients.
    pub fn is_divergence(&self) -> bool {
        matches!(self, TrainError::Divergence { .. } | TrainError::NonFiniteGradient(_))
    }
}
