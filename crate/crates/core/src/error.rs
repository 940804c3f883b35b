use std::io;

use thiserror::Error;

pub type Result<T, E = GcombError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GcombError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl GcombError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GcombError::Domain(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        GcombError::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for this error class: 3 for data problems, 4 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            GcombError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
