use std::path::PathBuf;

use thiserror::Error;

use crate::ExampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },

    #[error("{path}: line {line} is empty")]
    EmptyLine { path: PathBuf, line: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("{context}: line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("score logs are missing {} (seed, example) entries, first: {:?}", .0.len(), preview(.0))]
    MissingScores(Vec<(u32, ExampleId)>),

    #[error("scorer for seed {seed} failed: {message}")]
    Scorer { seed: u32, message: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("non-finite inputs in rows {0:?}")]
    NonFiniteInputs(Vec<usize>),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown example ids: {0:?}")]
    UnknownIds(Vec<ExampleId>),

    #[error("checksum mismatch: header says {expected}, content hashes to {found}")]
    ChecksumMismatch { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: String },

    #[error("column mismatch: expected {expected:?}, found {found:?}")]
    ColumnMismatch { expected: String, found: String },

    #[error("truncated artifact: {0}")]
    Truncated(String),

    #[error("missing translations for manifest rows {0:?}")]
    MissingTranslations(Vec<usize>),

    #[error("model file: {0}")]
    ModelFormat(String),
}

fn preview<T>(items: &[T]) -> &[T] {
    &items[..items.len().min(10)]
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        context: impl Into<String>,
        line: usize,
        column: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            column,
            message: message.into(),
        }
    }
}
