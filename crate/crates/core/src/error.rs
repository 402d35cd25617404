use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum AcrlError {
    /// An argument violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value failed validation; `field` is the dotted path.
    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    /// A loss or bootstrap target became non-finite.
    #[error("divergence: {0}")]
    Divergence(String),

    /// The ground-truth evaluation function failed on a state.
    #[error("oracle failure on state {state}: {message}")]
    Oracle { state: String, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AcrlError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(AcrlError::Domain(msg.into()))
}

pub(crate) fn config_err<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T> {
    Err(AcrlError::Config {
        field: field.into(),
        message: message.into(),
    })
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        domain(format!("{name} must be finite, got {value}"))
    }
}
