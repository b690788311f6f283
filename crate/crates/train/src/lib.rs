//! Two-stage training (adversarial segmentation, then error-mask
//! refinement), optimizers, run configuration and inference.

pub mod cgan;
pub mod config;
pub mod data;
pub mod error;
pub mod optim;
pub mod predict;
pub mod refine;
pub mod steps;
pub mod trace;

pub use cgan::{train_cgan, CganRun, DISCRIMINATOR, GENERATOR, REFINEMENT};
pub use config::RunConfig;
pub use data::PatientSlices;
pub use error::{Result, TrainError};
pub use optim::{Optimizer, OptimizerKind, OptimizerSpec};
pub use predict::predict;
pub use refine::{train_refinement, RefineRun};
