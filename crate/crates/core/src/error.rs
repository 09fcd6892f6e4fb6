use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operand has the wrong extent along a named axis.
    #[error("dimension error on axis `{axis}`: {detail}")]
    Dimension { axis: String, detail: String },

    #[error("configuration error in `{field}`: {detail}")]
    Config { field: String, detail: String },

    /// Malformed binary or text input; `offset` is the byte position where parsing failed.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("unsupported container version: {0}")]
    Version(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A single dataset entry failed to load. Callers iterating a dataset may skip it.
    #[error("could not load {}: {source}", path.display())]
    Sample {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
