use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate thresholds: t1 = {t1}, t2 = {t2} (need 0 < t2 < t1 < 1)")]
    DegenerateThresholds { t1: f64, t2: f64 },

    #[error("optimization diverged at iteration {iteration}: cost = {cost}")]
    Diverged { iteration: usize, cost: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed value at row {row}, column {col}: {msg}")]
    Malformed { row: usize, col: usize, msg: String },

    #[error("row {row} has {found} features, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
