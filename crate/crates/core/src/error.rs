use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    /// A log-density, loss or gradient went non-finite. Carries a diagnostic.
    #[error("numerical blowup: {0}")]
    NonFinite(String),
    /// The requested statistic is mathematically undefined for these inputs.
    #[error("undefined result: {0}")]
    Undefined(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
