use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("row {row} of the softmax mask has no nonzero entry; insert a self-loop first")]
    DegenerateRow { row: usize },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("inter-class ratio is undefined for a graph without edges")]
    UndefinedRatio,

    #[error("target inter-class ratio {target} is infeasible: {reason}")]
    InfeasibleTarget { target: f64, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integrity check failed for `{field}`: expected {expected}, found {found}")]
    Integrity {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid config value for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-provided configuration or input files.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Parse { .. }
                | Error::Integrity { .. }
                | Error::InvalidGraph(_)
                | Error::Io { .. }
        )
    }
}
