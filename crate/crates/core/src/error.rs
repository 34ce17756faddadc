use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::types::SiteKey;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access '{path}': {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("no such direction '{0}'")]
    BadDirection(String),
    #[error("invalid combined site id '{0}'")]
    BadSiteKey(String),
    #[error("no such road class '{0}'")]
    BadRoadClass(String),
    #[error("invalid {field} for site {site}: {message}")]
    BadMetadata {
        site: String,
        field: &'static str,
        message: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("site catalog is empty")]
    EmptyCatalog,
    #[error("harvest interval must be a positive divisor of 3600 s, got {0}")]
    BadInterval(i64),
    #[error("harvest horizon end must be after start ({start} >= {end})")]
    BadHorizon { start: String, end: String },
    #[error("provider response missing or invalid at {path}: {message}")]
    ProviderResponse { path: String, message: String },
    #[error("site {0} has no usable volume axis (all volumes zero)")]
    UnusableSite(SiteKey),
    #[error("site {site}: beta unidentifiable ({message})")]
    DegenerateFit { site: SiteKey, message: String },
    #[error("unknown site '{site}'; available: {available}")]
    UnknownSite { site: String, available: String },
    #[error("invalid value for '{field}': {message}")]
    BadSpec { field: String, message: String },
    #[error("invalid model parameter {field}: {message}")]
    BadParameter { field: &'static str, message: String },
    #[error("negative volume {0} passed to volume-delay evaluation")]
    NegativeVolume(f64),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
