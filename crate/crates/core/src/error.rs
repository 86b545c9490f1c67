use thiserror::Error;

use crate::eval::EvalError;
use crate::features::FeatureError;
use crate::geodesy::GeodesyError;
use crate::grid::GridError;
use crate::ingest::IngestError;
use crate::models::ModelError;
use crate::tuning::TuningError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error, one variant per pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
