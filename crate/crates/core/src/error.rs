use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// A malformed or inconsistent input panel.
    #[error("load error at row {row}, column {column}: {message}")]
    Load { row: usize, column: usize, message: String },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-positive entry {value} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("process is not stationary: rho(P*) = {rho_companion:.6}, rho(Phi) = {rho_phi:.6}")]
    NotStationary { rho_companion: f64, rho_phi: f64 },

    #[error("cannot normalise a matrix with zero spectral radius")]
    ZeroSpectralRadius,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("series {index} has zero variance")]
    ZeroVariance { index: usize },

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
