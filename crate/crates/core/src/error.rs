use std::path::PathBuf;

use thiserror::Error;

/// Failures talking to a search, LLM or embedding backend.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    /// Rate limiting; kept distinct so batch runs can back off.
    #[error("quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("fixture not found: {0}")]
    FixtureNotFound(String),
    #[error("offline mode: no cached {0} response")]
    Offline(String),
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cache I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("tagger unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine similarity undefined for an all-zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding backend returned {found} vectors for {expected} texts")]
    CountMismatch { expected: usize, found: usize },
    /// The filter completion contained no usable sentences.
    #[error("LLM filter returned no sentences")]
    EmptyFilter,
    #[error("selection input is empty: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("no prediction pairs to score")]
    EmptyInput,
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("aborting run: {streak} consecutive claim failures out of {total} records (last error: {last})")]
    SystemicFailure {
        streak: usize,
        total: usize,
        last: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid value for {field}: {detail}")]
    Invalid { field: &'static str, detail: String },
    #[error("missing required config field {0}")]
    Missing(&'static str),
}

/// Crate-level error for operations that cross stage boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid claim: {0}")]
    InvalidClaim(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
