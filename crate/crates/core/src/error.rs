use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Compute,
}

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {column}: cannot parse {field:?} as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: usize,
        field: String,
    },

    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("{0}: file contains no data rows")]
    EmptyFile(PathBuf),

    #[error("non-finite value at dimension {dim}, step {step}")]
    NonFinite { dim: usize, step: usize },

    #[error("npy: {0}")]
    Npy(String),

    #[error("missing {what} file in {dir}")]
    MissingFile { dir: PathBuf, what: &'static str },

    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch: {context} (expected {expected}, found {found})")]
    LengthMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid label value {value} at index {index} (labels must be 0 or 1)")]
    InvalidLabel { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap this error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) => ErrorKind::Config,
            Error::Io { .. }
            | Error::NonNumeric { .. }
            | Error::RaggedRow { .. }
            | Error::EmptyFile(_)
            | Error::Malformed { .. }
            | Error::NonFinite { .. }
            | Error::Npy(_)
            | Error::MissingFile { .. }
            | Error::DimensionMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::InvalidLabel { .. }
            | Error::SeriesTooShort(_)
            | Error::Serde(_) => ErrorKind::Data,
            Error::Degenerate(_) | Error::Model(_) | Error::Internal(_) | Error::Image(_) => {
                ErrorKind::Compute
            }
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
