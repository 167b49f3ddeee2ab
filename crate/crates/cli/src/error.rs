use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PIPELINE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Pipeline(#[from] fnirvar::Error),
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
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Pipeline(fnirvar::Error::Io { .. }) => EXIT_IO,
            CliError::Pipeline(fnirvar::Error::Csv(e)) if e.is_io_error() => EXIT_IO,
            CliError::Pipeline(fnirvar::Error::InvalidParameter { .. }) => EXIT_CONFIG,
            CliError::Pipeline(_) => EXIT_PIPELINE,
        }
    }

    /// Machine-readable error kind for the JSON error line.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_IO => "io",
            _ => "pipeline",
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
