use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed PPM input. `offset` is the byte position where parsing failed.
    #[error("ppm format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("parameter `{name}` = {value} outside [{lo}, {hi}]")]
    ParamRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("malformed parameter file: {0}")]
    ParamFile(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image too small: {0}")]
    Undersized(String),

    #[error("shape error in {what}: {message}")]
    Shape { what: String, message: String },

    #[error("weight file error: {0}")]
    Weights(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn shape(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            what: what.into(),
            message: message.into(),
        }
    }
}
