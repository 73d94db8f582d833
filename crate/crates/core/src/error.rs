use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?} ({context})")]
    ShapeMismatch {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),

    #[error("radial direction undefined at the image center ({row}, {col})")]
    DegenerateDirection { row: f64, col: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward called before forward on layer `{0}`")]
    BackwardBeforeForward(String),

    #[error("batch norm `{0}` needs more than one value per channel in training mode")]
    BatchNormSingleValue(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("missing data file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("bad magic in {}: expected {expected:#010x}, found {found:#010x}", path.display())]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("truncated payload in {}: expected {expected} bytes, found {found}", path.display())]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("malformed file {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
