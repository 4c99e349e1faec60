use std::io;

use thiserror::Error;

use crate::config::ConfigError;
use crate::corpus::IngestError;
use crate::metrics::MetricError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("{0}: empty input sequence")]
    EmptySequence(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (example {example}): {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        example: String,
        detail: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
