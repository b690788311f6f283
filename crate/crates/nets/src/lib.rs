//! Generator, discriminator and refinement networks with hand-written
//! forward and backward passes over channel-last slice batches.

pub mod checkpoint;
pub mod error;
pub mod layers;
pub mod network;
pub mod scalar;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NetError, Result};
pub use network::{ForwardOutput, NetConfig, NetKind, Network, NormStats};
pub use scalar::Scalar;
pub use tensor::Tensor;
