use thiserror::Error;

/// Errors produced by every layer of the crate.
///
/// The variants are grouped the way the CLI maps them to exit codes:
/// configuration/precondition problems, component incompatibilities,
/// numeric failures, and I/O or integrity failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter scope of {size} exceeds dense capacity cap {cap}")]
    Capacity { size: usize, cap: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible components: {0}")]
    Incompatible(String),

    #[error("metric state error: {0}")]
    Metric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported bundle schema version {found} (this build reads version {supported})")]
    UnsupportedSchema { found: u32, supported: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn incompatible(msg: impl Into<String>) -> Self {
        Error::Incompatible(msg.into())
    }

    pub fn metric(msg: impl Into<String>) -> Self {
        Error::Metric(msg.into())
    }
}
