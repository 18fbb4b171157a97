use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed tokenizer file {path}: {reason}")]
    TokenizerFile { path: PathBuf, reason: String },

    #[error("token id {id} is outside the vocabulary (size {vocab_size})")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("tensor `{0}` contains NaN or infinite values")]
    NonFinite(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("empty token sequence")]
    EmptySequence,

    #[error("sequence of {len} positions exceeds the context window of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("embedding dimension {actual} does not match model width {expected}")]
    EmbeddingDim { expected: usize, actual: usize },

    #[error("invalid degradation spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("transcript `{0}` is empty after preprocessing")]
    EmptyTranscript(String),

    #[error("participant `{0}` has no scoreable transcripts")]
    NoScoreableTranscripts(String),

    #[error("AUC is undefined: {0}")]
    UndefinedAuc(String),

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("statistic is undefined: {0}")]
    UndefinedStatistic(String),

    #[error("cross-validation fold {fold}: {reason}")]
    Fold { fold: usize, reason: String },

    #[error("pattern {layers:?} failed: {source}")]
    Pattern {
        layers: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid generation config: {0}")]
    InvalidGenConfig(String),

    #[error("prompt is empty")]
    EmptyPrompt,

    #[error("frequency table is empty")]
    EmptyFrequencyTable,

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate transcript id `{0}`")]
    DuplicateTranscript(String),

    #[error("invalid transcript record: {0}")]
    InvalidRecord(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
