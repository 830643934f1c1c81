use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration and validation problems exit 2, instance-id mismatches
/// exit 3, numeric failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{context}: duplicate sense `{sense}` for lemma `{lemma}`")]
    DuplicateSense {
        context: String,
        lemma: String,
        sense: String,
    },

    #[error("{context}: empty sense list for lemma `{lemma}`")]
    EmptySenses { context: String, lemma: String },

    #[error("unknown lemma `{lemma}`{context}")]
    UnknownLemma { lemma: String, context: String },

    #[error("{context}: unknown sense `{sense}` for lemma `{lemma}`")]
    UnknownSense {
        context: String,
        lemma: String,
        sense: String,
    },

    #[error("{context}: focus index {focus} out of range for {len} token(s)")]
    FocusOutOfRange {
        context: String,
        focus: usize,
        len: usize,
    },

    /// Configuration or input validation failure (CLI exit 2).
    #[error("{0}")]
    InvalidInput(String),

    /// No non-focus token of the sentence is covered by the word-vector table.
    #[error("no in-table context token around the focus")]
    EmptyContext,

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("backend mismatch: context from `{context}` but store built with `{store}`")]
    BackendMismatch { context: String, store: String },

    /// Prediction/gold keyed by different instance ids (CLI exit 3).
    #[error("instance id mismatch: {0}")]
    IdMismatch(String),

    /// Non-finite loss, logits, or solver state (CLI exit 4).
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IdMismatch(_) => 3,
            Error::Numeric(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
