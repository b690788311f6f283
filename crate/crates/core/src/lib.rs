//! Data model, file format and numerical building blocks for conditional
//! refinement GAN segmentation: volumes and label maps, MVOL I/O, intensity
//! preprocessing, patient-wise batch normalization, adversarial and
//! error-mask losses, segmentation metrics and a synthetic data generator.

pub mod error;
pub mod losses;
pub mod metrics;
pub mod mvol;
pub mod pbn;
pub mod preprocess;
pub mod synth;
pub mod volume;

pub use error::{CoreError, Result};
pub use volume::{AcquisitionPlane, PatientRecord, SegMap, SliceSequence, Volume};
