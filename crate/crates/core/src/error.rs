use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("ragged alignment: row `{name}` has {found} sites, expected {expected}")]
    RaggedRows {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate taxon name `{0}`")]
    DuplicateTaxon(String),
    #[error("invalid character `{ch}` in sequence `{name}`")]
    InvalidCharacter { name: String, ch: char },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown leaf label `{0}`")]
    UnknownLeaf(String),
    #[error("node with {0} children is not bifurcating")]
    NonBinary(usize),
    #[error("leaf `{0}` appears more than once")]
    RepeatedLeaf(String),
    #[error("at least 3 taxa are required, got {0}")]
    TooFewTaxa(usize),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid branch length {0}")]
    InvalidBranchLength(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("taxon set mismatch: {0}")]
    TaxonMismatch(String),
    #[error("tree topology is outside the SBN support")]
    OutOfSupport,
    #[error("metric schema error: {0}")]
    Schema(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite bound at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
