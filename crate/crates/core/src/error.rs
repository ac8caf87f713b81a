use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric (max |a - aᵀ| = {max_asymmetry:e}, tolerance {tol:e})")]
    NotSymmetric { max_asymmetry: f64, tol: f64 },

    #[error("network has no hidden layers")]
    EmptyNetwork,

    #[error("index {index} out of range for `{tensor}` ({len} elements)")]
    IndexOutOfRange {
        tensor: String,
        index: usize,
        len: usize,
    },

    #[error("unknown parameter tensor `{0}`")]
    UnknownTensor(String),

    #[error("no parameter count given for component `{0}`")]
    MissingParamCount(String),

    #[error("loss became non-finite at step {step} (loss = {loss})")]
    NonfiniteLoss { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid label {0}")]
    InvalidLabel(f64),

    #[error("bad magic number {0}")]
    BadMagic(String),

    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("{0} unexpected trailing bytes")]
    TrailingData(usize),

    #[error("unsupported IDX element type {0:#04x} (only unsigned bytes are supported)")]
    UnsupportedElementType(u8),

    #[error("shape {rows}x{cols} overflows or is empty")]
    ShapeOverflow { rows: u64, cols: u64 },

    #[error("need {needed} samples of class {class}, found {found}")]
    InsufficientSamples {
        class: u8,
        needed: usize,
        found: usize,
    },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
