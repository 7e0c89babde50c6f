use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // tensor validation
    #[error("non-finite attention value at index {0}")]
    NonFinite(usize),
    #[error("negative attention value at index {0}")]
    Negative(usize),
    #[error("attention value above 1 at index {0}")]
    AboveOne(usize),
    #[error("tensor has {actual} values, shape requires {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid tensor shape {tokens}x{layers}x{heads}")]
    InvalidShape { tokens: u32, layers: u32, heads: u32 },

    // shard format
    #[error("bad magic bytes, not a shard file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("file truncated")]
    TruncatedFile,
    #[error("corrupt record {index}: {reason}")]
    CorruptRecord { index: u64, reason: String },

    // dataset
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("category {0} has no instances")]
    EmptyCategory(String),
    #[error("{reserved} reserved test ids exceed the test split size {test_size}")]
    ReservedTooLarge { reserved: usize, test_size: usize },
    #[error("image {0} has fewer present objects than requested")]
    InsufficientObjects(String),
    #[error("image {0} has fewer absent objects than requested")]
    InsufficientAbsentObjects(String),

    // mlp
    #[error("input dimension {0} exceeds the supported maximum")]
    ShapeTooLarge(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("class {0} has no training samples")]
    EmptyClass(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid model file: {0}")]
    BadModelFile(String),

    // pipeline
    #[error("sample {0:?} lacks answer probabilities")]
    MissingProbability(String),
    #[error("answer is not yes/no")]
    NotBinaryAnswer,
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    // metrics
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("non-binary label in yes/no report")]
    NonBinary,

    // synthgen
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable variant name, used in the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "NonFinite",
            Error::Negative(_) => "Negative",
            Error::AboveOne(_) => "AboveOne",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidShape { .. } => "InvalidShape",
            Error::BadMagic => "BadMagic",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::DuplicateId(_) => "DuplicateId",
            Error::TruncatedFile => "TruncatedFile",
            Error::CorruptRecord { .. } => "CorruptRecord",
            Error::InvalidInput(_) => "InvalidInput",
            Error::EmptyCategory(_) => "EmptyCategory",
            Error::ReservedTooLarge { .. } => "ReservedTooLarge",
            Error::InsufficientObjects(_) => "InsufficientObjects",
            Error::InsufficientAbsentObjects(_) => "InsufficientAbsentObjects",
            Error::ShapeTooLarge(_) => "ShapeTooLarge",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::BadLabel { .. } => "BadLabel",
            Error::EmptyClass(_) => "EmptyClass",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::BadModelFile(_) => "BadModelFile",
            Error::MissingProbability(_) => "MissingProbability",
            Error::NotBinaryAnswer => "NotBinaryAnswer",
            Error::InvalidBundle(_) => "InvalidBundle",
            Error::UnknownLabel(_) => "UnknownLabel",
            Error::NonBinary => "NonBinary",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }
}
