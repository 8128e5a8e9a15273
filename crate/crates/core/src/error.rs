use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("newick syntax error at line {line}, column {column}: {message}")]
    NewickSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("tree has no leaf labelled {0:?}")]
    MissingNaive(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("data mismatch: {0}")]
    DataMismatch(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("prior row at position {position} (state {state}) sums to {sum}, expected 1")]
    PriorNormalization {
        position: usize,
        state: char,
        sum: f64,
    },

    #[error("trace row {row}: {message}")]
    TraceRow { row: usize, message: String },

    #[error("data has zero probability under the model: {0}")]
    ImpossibleData(String),

    #[error("only {finite} samples have finite weight, {requested} requested")]
    InsufficientPool { finite: usize, requested: usize },

    #[error("MCMC initialization failed: {0}")]
    Initialization(String),

    #[error("reading frame error: length {0} is not a multiple of 3")]
    Frame(usize),

    #[error("unknown sequence identifier {0:?}")]
    UnknownIdentifier(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
