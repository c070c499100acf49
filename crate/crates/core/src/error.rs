use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor shape {shape:?} holds {expected} values but {found} were given")]
    TensorSize {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("tensor contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("layer {layer}: expected input shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid architecture spec `{spec}`: {reason}")]
    Arch { spec: String, reason: String },

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("layer {layer} ({kind}) is not supported by {what}")]
    UnsupportedLayer {
        layer: usize,
        kind: &'static str,
        what: &'static str,
    },

    #[error("training diverged: loss became {loss} at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid codeword symbol {0:?}")]
    Symbol(char),

    #[error("{what} mismatch: declared {declared}, found {found}")]
    Metadata {
        what: &'static str,
        declared: String,
        found: String,
    },

    #[error("class {class} has no codewords to explain with")]
    NoExplanation { class: usize },

    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated, expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}
