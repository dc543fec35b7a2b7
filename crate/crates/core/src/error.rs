use thiserror::Error;

/// Errors raised by the modelling, selection and harness layers.
#[derive(Debug, Error)]
pub enum AosError {
    /// A caller broke an argument contract (shape, bounds, ordering).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is unusable (non-finite values, out-of-domain queries).
    #[error("invalid input: {0}")]
    Input(String),

    /// Cholesky factorization failed even after jitter escalation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every candidate was excluded because it duplicates a measured point.
    #[error("candidate set exhausted: {0}")]
    Exhausted(String),

    /// Fewer samples than cross-validation folds.
    #[error("cannot build {folds} folds from {samples} samples")]
    Folds { folds: usize, samples: usize },

    /// A validation output has zero range, so normalized errors are undefined.
    #[error("degenerate output: {0}")]
    Degenerate(String),

    /// Learning curves do not share an iteration grid.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, AosError>;

impl AosError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AosError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for AosError {
    fn from(e: serde_json::Error) -> Self {
        AosError::Serde(e.to_string())
    }
}
