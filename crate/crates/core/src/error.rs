use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training diverged at iteration {iteration}: non-finite {what}")]
    Divergence {
        iteration: usize,
        what: &'static str,
    },

    #[error("attack displacement {displacement} exceeds radius {delta}")]
    RadiusViolation { displacement: f64, delta: f64 },

    #[error("memorization balls overlap for training pairs {pairs:?}")]
    Geometry { pairs: Vec<(usize, usize)> },

    #[error("snapshots are not consecutive: iterations {first} and {second}")]
    NonConsecutive { first: usize, second: usize },

    #[error("invalid argument: {0}")]
    Argument(String),
}

impl LabError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
