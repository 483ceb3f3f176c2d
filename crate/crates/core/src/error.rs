use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the fusion toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate direction")]
    DegenerateDirection,

    #[error("insufficient samples: need {needed} distinct samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("incompatible codebook: {0}")]
    IncompatibleCodebook(String),

    #[error("layout infeasible: {0}")]
    LayoutInfeasible(String),

    #[error("unprojectable: object corner behind the camera (z = {z})")]
    Unprojectable { z: f64 },

    #[error("empty ground truth")]
    EmptyGroundTruth,

    #[error("resolution mismatch: {left} vs {right}")]
    ResolutionMismatch { left: usize, right: usize },

    #[error("missing shape for {0}")]
    MissingShape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidValue(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
