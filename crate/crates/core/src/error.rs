//! Error type shared across the library.

use std::path::PathBuf;

use thiserror::Error;

/// All failures the library surfaces to callers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in an input file failed to parse or validate.
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An image definition violated a field constraint.
    #[error("invalid image {id:?}: {message}")]
    InvalidImage { id: String, message: String },

    #[error("duplicate image id {id:?}")]
    DuplicateImageId { id: String },

    /// The user does not own any image in the corpus.
    #[error("unknown user {user:?}")]
    UnknownUser { user: String },

    /// The user's profile contains no tags the model knows about.
    #[error("cold user {user:?}: no profile tags overlap the model vocabulary")]
    ColdUser { user: String },

    /// A candidate image's owner is missing from the model vocabulary.
    #[error("image {image:?} has owner {owner:?} unknown to the model")]
    UnknownOwner { image: String, owner: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// labeled_only precision over a result set with no labeled members.
    #[error("precision undefined: no labeled images among the results")]
    UndefinedPrecision,

    #[error("result list is empty")]
    EmptyResults,

    #[error("no relevance labels supplied")]
    EmptyLabels,

    /// Planted and learned models disagree on the number of topics.
    #[error("topic count mismatch: expected {expected}, found {found}")]
    TopicCountMismatch { expected: usize, found: usize },

    #[error("model file {path}: {message}")]
    ModelFile { path: PathBuf, message: String },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    FormatVersion { found: u32, supported: u32 },

    /// Rejection resampling failed to produce a distinct annotation in time.
    #[error("exceeded {cap} retries while sampling distinct annotations; widen the vocabulary or narrow the per-image range")]
    RetryCapExceeded { cap: u32 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for wrapping IO failures with the path they concern.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
