//! Error type shared across the toolkit.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CalvalError>;

/// Unified error type for model evaluation, fitting, sampling, and pipeline
/// orchestration.
#[derive(Debug, Error)]
pub enum CalvalError {
    /// A vector or matrix had the wrong length for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// An input or intermediate value was NaN or infinite where a finite
    /// value is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation required more observations or samples than were supplied.
    #[error("{context}: need at least {needed} items, got {got}")]
    TooFew {
        context: String,
        needed: usize,
        got: usize,
    },

    /// A covariance matrix could not be factorized, with the contributing
    /// component named for diagnosis.
    #[error("singular or indefinite covariance in {0}")]
    SingularCovariance(String),

    /// Gaussian-process fitting failed beyond recovery.
    #[error("GP fit failed: {0}")]
    GpFit(String),

    /// The adaptive proposal shrank to nothing; the posterior is likely
    /// degenerate or the starting point is invalid.
    #[error("MCMC step size collapsed during adaptation (scale {scale:.3e} after {steps} steps)")]
    StepSizeCollapse { scale: f64, steps: usize },

    /// A pipeline stage was invoked before a stage it depends on.
    #[error("stage `{stage}` requires stage `{missing}` to run first")]
    MissingStage { stage: String, missing: String },

    /// An artifact on disk no longer matches the checksum recorded in the
    /// run manifest.
    #[error("checksum mismatch for artifact `{path}`: manifest records {expected}, file hashes to {actual}")]
    ChecksumMismatch {
        path: String,
        expected: String,
        actual: String,
    },

    /// The run configuration failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// Another process (or a crashed run) holds the output directory.
    #[error("output directory is locked by `{0}`; remove the lock file if no other run is active")]
    LockHeld(String),

    /// Malformed dataset contents.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("TOML parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("TOML serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl CalvalError {
    /// Shorthand for [`CalvalError::InvalidArgument`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        CalvalError::InvalidArgument(msg.into())
    }
}
