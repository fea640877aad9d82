use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid layer indices ({i}, {j}) for a {depth}-layer network")]
    InvalidLayers { i: usize, j: usize, depth: usize },

    #[error("margin ratio {0} is not below 1")]
    InvalidRatio(f64),

    #[error("degenerate margin statistics: r = {r}, theta = {theta}")]
    DegenerateMargins { r: f64, theta: f64 },

    #[error("every sample was skipped at layer {layer}: zero-norm denominators")]
    AllSkipped { layer: usize },

    #[error("loss became {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("IDX parse error in {path} at byte offset {offset}: {message}")]
    Idx {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("grid cell r = {r}, theta = {theta}, eta = {eta} failed: {source}")]
    GridCell {
        r: f64,
        theta: f64,
        eta: f64,
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
