use thiserror::Error;

use crate::config::ConfigError;
use crate::filterpipe::PipelineError;
use crate::geometry::GeometryError;
use crate::ingest::IngestError;
use crate::manifest::ManifestError;
use crate::scorers::ScorerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure category, stable across releases. The CLI maps each class
/// to a fixed exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Scorer,
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Manifest(e) => e.class(),
            Error::Ingest(e) => e.class(),
            Error::Scorer(_) => ErrorClass::Scorer,
            Error::Pipeline(e) => e.class(),
            Error::Config(e) => e.class(),
            Error::Geometry(_) => ErrorClass::Validation,
            Error::Io { .. } => ErrorClass::Io,
            Error::Usage(_) => ErrorClass::Usage,
            Error::Validation(_) => ErrorClass::Validation,
        }
    }
}
