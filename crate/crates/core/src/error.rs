use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on values (ranges, band edges, degenerate inputs) was violated.
    #[error("{0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A file did not match its format.
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Stable short code used in the CLI's `ERROR:<stage>:<code>:` prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            // Malformed JSON input is a format problem like any other.
            Error::Json(_) => "format",
        }
    }
}
