//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the training engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Non-finite values where finite ones are required.
    #[error("invalid value: {0}")]
    Validity(String),

    /// An operation was called outside its domain (empty batch, K_s < 2, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration failed validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A feature file failed to parse; line numbers are 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Evaluation requested without ground-truth target labels.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// A loss term evaluated to NaN or infinity.
    #[error("loss term {term} is non-finite")]
    NonFiniteTerm { term: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
