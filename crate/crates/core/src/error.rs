use std::path::PathBuf;

use crate::model::{BusId, LineId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid feeder: {0}")]
    Feeder(String),
    #[error("line {line} references unknown bus {bus}")]
    UnknownBus { line: LineId, bus: BusId },
    #[error("invalid placement: {0}")]
    Placement(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("load flow did not converge for samples {start_k}..{end_k} after {iterations} iterations (mismatch {mismatch:.3e})")]
    LoadFlow {
        start_k: u64,
        end_k: u64,
        iterations: usize,
        mismatch: f64,
    },
    #[error("exhaustive search needs {count} evaluations, budget is {budget}")]
    Budget { count: u128, budget: u128 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] crate::transport::CodecError),
    #[error("network error: {0}")]
    Network(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
