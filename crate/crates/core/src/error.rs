use std::path::PathBuf;

use crate::extension::ExtensionReport;
use crate::model::{TokenId, TokenizerModel};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("segment contains {unit:?} which has no atomic token in the vocabulary")]
    UnknownAtom { unit: String },

    #[error("token id {0} is not in the vocabulary")]
    UnknownId(TokenId),

    #[error("inconsistent model: {0}")]
    InconsistentModel(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("token {0} is not a leaf of the merge graph")]
    NotALeaf(TokenId),

    #[error("target vocabulary size {target} is smaller than the atomic alphabet ({alphabet})")]
    TargetTooSmall { target: usize, alphabet: usize },

    #[error("extension exhausted after adding {} of {requested} tokens", .partial.1.added_tokens.len())]
    Exhausted {
        requested: usize,
        partial: Box<(TokenizerModel, ExtensionReport)>,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("token distribution is degenerate (fewer than two distinct tokens)")]
    DegenerateDistribution,

    #[error("the set of added tokens is empty")]
    EmptySet,

    #[error("new token {token:?} cannot be tokenized by the old tokenizer: {reason}")]
    UntokenizableNewToken { token: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid pre-tokenizer pattern: {0}")]
    InvalidPattern(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn inconsistent(msg: impl Into<String>) -> Self {
        Error::InconsistentModel(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::UnsupportedModel(msg.into())
    }
}
