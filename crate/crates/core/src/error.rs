use std::io;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic bytes {0:?}, expected \"MVL1\"")]
    BadMagic([u8; 4]),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("unsupported number of dimensions {0}, expected 3 or 4")]
    BadNdim(u8),

    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated {
        section: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("malformed header: {0}")]
    BadHeader(String),

    #[error("non-finite voxel value at flat index {0}")]
    NonFinite(usize),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid segmentation map: {0}")]
    InvalidSegMap(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("surface distance undefined: {0}")]
    UndefinedDistance(String),

    #[error("unknown class {0} in region specification")]
    UnknownClass(u8),

    #[error("lesion does not fit: {0}")]
    LesionDoesNotFit(String),

    #[error("manifest error: {0}")]
    Manifest(String),
}
