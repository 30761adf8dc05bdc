use std::path::PathBuf;

use crate::cluster::ClusterCensus;

/// Errors produced anywhere in the phase-retrieval toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric input was outside the domain of the operation (NaN, ±∞, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad parameters or a degenerate configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Raster dimensions disagree or are too small.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// The aperture mask does not satisfy a precondition.
    #[error("mask error: {0}")]
    Mask(String),

    #[error(
        "piston anchor pixel (row {row}, col {col}) is invalid; supply an alternate anchor pixel"
    )]
    InvalidAnchor { row: usize, col: usize },

    #[error("no cluster met the minimum sampling number ({census})")]
    NoCluster { census: ClusterCensus },

    #[error("least-squares design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("circular mean undefined: {0}")]
    Undefined(String),

    /// Structured parse failure for on-disk formats.
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
