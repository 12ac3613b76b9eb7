use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the engine.
///
/// Variants are grouped so that front ends can map them onto stable exit
/// codes: [`Error::Parse`] is a usage error, [`Error::Solver`] a numerical
/// failure, everything else is a data error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("header does not match ingest spec: {0}")]
    HeaderMismatch(String),

    #[error("attribute `{attr}`: cannot parse `{value}` as a number")]
    NumericParse { attr: String, value: String },

    #[error("attribute `{attr}`: bucket count must be at least 1")]
    BucketCount { attr: String },

    #[error("attribute `{attr}`: numeric attribute has no observations")]
    EmptyNumeric { attr: String },

    #[error("attribute `{attr}`: value `{value}` is outside the domain")]
    OutOfDomain { attr: String, value: String },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("row has {got} cells, schema has {expected} attributes")]
    RowLength { expected: usize, got: usize },

    #[error("invalid aggregate: {0}")]
    InvalidAggregate(String),

    #[error("no aggregate supports attributes {0:?}")]
    NoSupport(Vec<usize>),

    #[error("{0}")]
    InvalidInput(String),

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a pipeline stage name to an error.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
