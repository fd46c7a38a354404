use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: field `{field}`: {message}")]
    Record {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("cannot sample {requested} examples from a split of {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("cannot parse prompt: {0}")]
    Prompt(String),

    #[error("prompt not in script: {prompt:?} (nearest scripted prompt: {nearest:?})")]
    UnknownPrompt {
        prompt: String,
        nearest: Option<String>,
    },

    #[error("unknown {kind} `{name}` (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("backend: {0}")]
    Backend(String),

    #[error("no donor process with a title different from {0:?}")]
    NoEligibleDonor(String),

    #[error("coherence score {0} is outside the open interval (0, 1)")]
    ScoreOutOfRange(f64),

    #[error("{name} has {positives} positives and {negatives} negatives; expected 1:1")]
    Unbalanced {
        name: &'static str,
        positives: usize,
        negatives: usize,
    },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("decoding iteration {iteration}: {source}")]
    Decode {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
