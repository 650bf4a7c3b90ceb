use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DasError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants map onto the process exit codes used by the command line
/// front end: configuration and usage problems exit with 1, anything wrong
/// with input data exits with 2 and numerical failures exit with 3.
#[derive(Debug, Error)]
pub enum DasError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl DasError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        DasError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DasError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            DasError::Config(_) | DasError::InvalidArgument(_) | DasError::Shape { .. } => 1,
            DasError::Parse { .. } | DasError::Data(_) | DasError::Io { .. } => 2,
            DasError::Numerical(_) => 3,
        }
    }
}
