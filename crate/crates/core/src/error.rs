use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("index error in {op}: index {index} out of range for {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data error at row {row}{}: {msg}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Data {
        row: usize,
        column: Option<String>,
        msg: String,
    },

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn data(row: usize, column: Option<&str>, msg: impl Into<String>) -> Self {
        Error::Data {
            row,
            column: column.map(str::to_owned),
            msg: msg.into(),
        }
    }

    pub fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_owned(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Data { .. } | Error::Format { .. } | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Dimension { .. }
            | Error::Domain { .. }
            | Error::Index { .. }
            | Error::Contract(_) => 3,
        }
    }
}
