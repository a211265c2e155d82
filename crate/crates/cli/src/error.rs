use cgro_core::LabError;
use std::path::Path;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lab(#[from] LabError),

    #[error("checkpoint for iteration {0} not found in the run directory")]
    MissingCheckpoint(usize),

    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed artifact: {reason}")]
    Artifact { path: String, reason: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lab(LabError::Divergence { .. }) => 3,
            CliError::Lab(LabError::Geometry { .. }) => 5,
            CliError::Lab(_) => 2,
            CliError::MissingCheckpoint(_) => 4,
            CliError::MissingArtifacts(_) => 6,
            CliError::Io { .. } | CliError::Artifact { .. } => 1,
        }
    }
}
