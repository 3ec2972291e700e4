use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_AGAINST: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    BadFile { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(
        "model check has not passed: {0}; run check-model first or pass --force to check the prior anyway"
    )]
    ModelNotChecked(String),

    #[error("{context}: {source}")]
    Core {
        context: &'static str,
        #[source]
        source: cmcheck::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } => match source {
                cmcheck::Error::AllWeightsZero { .. } | cmcheck::Error::Numerical(_) => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            },
            _ => EXIT_INPUT,
        }
    }
}

pub trait Context<T> {
    fn context(self, context: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for cmcheck::Result<T> {
    fn context(self, context: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context, source })
    }
}
