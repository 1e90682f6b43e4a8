use thiserror::Error;

/// Every failure the library reports.
///
/// Variants map one-to-one onto stable machine-readable codes (see
/// [`Error::code`]) which the command-line driver prints on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm below 1e-12")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("negatives list is empty")]
    EmptyNegatives,
    #[error("negative {negative} shares the anchor's pair index")]
    InvalidNegative { negative: usize },
    #[error("batch has {0} pairs, need at least 2")]
    BatchTooSmall(usize),
    #[error("batch member {0} has no neighbor assignment")]
    MissingNeighborAssignment(usize),
    #[error("embedding for sample {id} ({modality}) missing from table")]
    MissingEmbedding { id: usize, modality: &'static str },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no token survives min_count={0}")]
    EmptyVocabulary(usize),
    #[error("vocabulary has {0} tokens, need at least 2")]
    VocabularyTooSmall(usize),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("no token of the document is in the vocabulary")]
    AllTokensUnknown,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("index needs at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("neighbor list for {0:?} is empty")]
    EmptyNeighborhood(String),
    #[error("missing features: {0}")]
    MissingFeatures(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("need at least {needed} samples for the task, have {available}")]
    TooFewDistractors { needed: usize, available: usize },
    #[error("id sets differ: {0}")]
    IdMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier for the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroVector => "ZeroVector",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::EmptyNegatives => "EmptyNegatives",
            Error::InvalidNegative { .. } => "InvalidNegative",
            Error::BatchTooSmall(_) => "BatchTooSmall",
            Error::MissingNeighborAssignment(_) => "MissingNeighborAssignment",
            Error::MissingEmbedding { .. } => "MissingEmbedding",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::EmptyVocabulary(_) => "EmptyVocabulary",
            Error::VocabularyTooSmall(_) => "VocabularyTooSmall",
            Error::UnknownToken(_) => "UnknownToken",
            Error::AllTokensUnknown => "AllTokensUnknown",
            Error::Parse { .. } => "ParseError",
            Error::DuplicateId(_) => "DuplicateId",
            Error::TooFewVectors(_) => "TooFewVectors",
            Error::UnknownId(_) => "UnknownId",
            Error::EmptyNeighborhood(_) => "EmptyNeighborhood",
            Error::MissingFeatures(_) => "MissingFeatures",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::DatasetTooSmall(_) => "DatasetTooSmall",
            Error::TooFewDistractors { .. } => "TooFewDistractors",
            Error::IdMismatch(_) => "IdMismatch",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
