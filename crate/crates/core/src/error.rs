use std::path::PathBuf;

/// Errors surfaced by the model, data and training layers.
#[derive(Debug, thiserror::Error)]
pub enum ScdError {
    #[error("dimension error on axis {axis}: {message}")]
    Dimension { axis: &'static str, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at scan step {step}")]
    NonFiniteScan { step: usize },

    #[error("non-finite loss at iteration {iteration} (last finite: {last_finite})")]
    NonFiniteLoss { iteration: usize, last_finite: String },

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("empty confusion matrix")]
    EmptyMatrix,

    #[error("data error in {path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable kind for CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Dimension { .. } => "dimension",
            Self::Config(_) => "config",
            Self::Contract(_) => "contract",
            Self::NonFiniteScan { .. } => "numerical",
            Self::NonFiniteLoss { .. } => "numerical",
            Self::NoValidPixels => "data",
            Self::EmptyMatrix => "metric",
            Self::Data { .. } => "data",
            Self::Checkpoint(_) => "checkpoint",
            Self::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = ScdError> = std::result::Result<T, E>;
