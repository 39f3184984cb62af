use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient measurements: got {got}, need more than {bound} (36 * {paths} paths)")]
    InsufficientMeasurements { got: usize, bound: usize, paths: usize },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:e} (max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
