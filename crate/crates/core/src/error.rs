//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A tape primitive was given tensors with incompatible shapes.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A loss or gradient came out NaN/Inf; `name` identifies the tensor.
    #[error("non-finite value in `{name}`")]
    NonFinite { name: String },

    /// A raw feature id is outside its field's vocabulary.
    #[error("field `{field}`: id {id} out of vocabulary (size {vocab})")]
    OutOfVocab {
        field: String,
        id: usize,
        vocab: usize,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("model file {path}: {msg}")]
    ModelFormat { path: String, msg: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
