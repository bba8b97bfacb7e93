use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid BDI score {0}: must lie in 0..=63")]
    InvalidScore(i64),
    #[error("invalid observation window of {0} days")]
    InvalidWindow(i64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus line {line}: {message}")]
    CorpusFormat { line: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown bag id `{0}` in partition")]
    UnknownBag(String),
    #[error("partition is not total: {0}")]
    PartitionNotTotal(String),
    #[error("leak: student `{student}` appears in both {first} and {second}")]
    Leak {
        student: String,
        first: String,
        second: String,
    },
    #[error("lexicon line {line}: {message}")]
    LexiconFormat { line: usize, message: String },
    #[error("tf-idf vectorizer used before fit")]
    NotFitted,
    #[error("empty image")]
    EmptyImage,
    #[error("image `{path}`: {message}")]
    Image { path: String, message: String },
    #[error("no face count recorded for post `{0}`")]
    MissingFaceCount(String),
    #[error("embedding file row {row}: {message}")]
    EmbeddingRow { row: usize, message: String },
    #[error("embedding file header: {0}")]
    EmbeddingHeader(String),
    #[error("missing embeddings for {} post(s): {}", .0.len(), .0.join(", "))]
    MissingEmbeddings(Vec<String>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature matrix: {0}")]
    Matrix(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("ROC curve needs at least one positive and one negative example")]
    DegenerateClasses,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
