use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("infeasible reference at step {step}: {reason}")]
    Infeasible { step: usize, reason: String },

    #[error("index {index} out of range 0..{len}")]
    Range { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("jacobian validation failed at step {step}: relative error {rel_error:.3e}")]
    Validation { step: usize, rel_error: f64 },

    #[error("training diverged at step {step}: {term}")]
    Training { step: usize, term: String },

    #[error("incompatible model and environment: {0}")]
    Compatibility(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("stale output for stage {stage}: {path}")]
    StaleOutput { stage: String, path: String },

    #[error("stage {stage} failed: {cause}")]
    Stage { stage: String, cause: String },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(context.to_string()))
    }
}
