use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
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

    #[error("duplicate document id `{0}`")]
    DuplicateDoc(String),

    #[error("invalid {category} rule: {message}")]
    TaggerConfig { category: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("plan does not match sequence: {0}")]
    PlanMismatch(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("non-finite loss at epoch {epoch}, step {step} (last finite loss {last_loss})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        last_loss: f64,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("model objective mismatch: {0}")]
    ObjectiveMismatch(String),

    #[error("config validation failed:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by a failing stage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::TaggerConfig { .. } | Error::InvalidArgument(_)
        )
    }
}
