use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("not an SGVOL file")]
    NotSgvol,

    #[error("corrupt volume: {0}")]
    CorruptVolume(String),

    #[error("corrupt crop dataset: {0}")]
    CorruptCropDataset(String),

    #[error("corrupt weights: {0}")]
    CorruptWeights(String),

    #[error("incompatible weights: {0}")]
    IncompatibleWeights(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("divergence: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("cannot satisfy overlap constraint: reduce C or extent ({placed} of {requested} placed)")]
    OverlapUnsatisfiable { placed: usize, requested: usize },

    #[error("outpaint degenerate: retained fraction {retained:.3} exceeds {limit:.3}")]
    OutpaintDegenerate { retained: f64, limit: f64 },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True when the failure stems from bad input (config, files, arguments)
    /// rather than from a computation that went wrong.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::Invariant(_)
                | Error::NotSgvol
                | Error::CorruptVolume(_)
                | Error::CorruptCropDataset(_)
                | Error::CorruptWeights(_)
                | Error::IncompatibleWeights(_)
                | Error::ShapeMismatch(_)
                | Error::Invalid(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
