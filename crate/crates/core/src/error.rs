use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in tensor `{tensor}`: {detail}")]
    Shape { tensor: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: format error at {location}: {message}")]
    Format {
        path: PathBuf,
        location: Location,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Position of a parse failure inside a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(usize),
    Whole,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Byte(offset) => write!(f, "byte offset {offset}"),
            Location::Line(line) => write!(f, "line {line}"),
            Location::Whole => f.write_str("file"),
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, location: Location, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            location,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
