use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: u64, reason: String },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("oracle mask missing for image {0}")]
    OracleMaskMissing(String),

    #[error("mask has no foreground pixels")]
    EmptyForeground,

    #[error("no tile passes the mask inclusion test")]
    NoTilesIncluded,

    #[error("box ({row},{col},{height},{width}) lies outside a {img_h}x{img_w} image")]
    BoxOutsideImage {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
        img_h: usize,
        img_w: usize,
    },

    #[error("architecture expects {expected}x{expected} input, got {found}x{found}")]
    ArchitectureMismatch { expected: usize, found: usize },

    #[error("bag {0} has no tiles")]
    EmptyBag(usize),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },

    #[error("predictions do not align with bags: {0}")]
    AlignmentMismatch(String),

    #[error("corpus needs at least one positive and one negative bag ({positives} positive, {negatives} negative)")]
    DegenerateCorpus { positives: usize, negatives: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("ROC needs at least one positive and one negative label")]
    DegenerateLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("serialization failed: {0}")]
    Serialization(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable kind, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "MissingFile",
            Error::MalformedManifest { .. } => "MalformedManifest",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::OracleMaskMissing(_) => "OracleMaskMissing",
            Error::EmptyForeground => "EmptyForeground",
            Error::NoTilesIncluded => "NoTilesIncluded",
            Error::BoxOutsideImage { .. } => "BoxOutsideImage",
            Error::ArchitectureMismatch { .. } => "ArchitectureMismatch",
            Error::EmptyBag(_) => "EmptyBag",
            Error::EmptyTrainingSet => "EmptyTrainingSet",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::AlignmentMismatch(_) => "AlignmentMismatch",
            Error::DegenerateCorpus { .. } => "DegenerateCorpus",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::DegenerateLabels => "DegenerateLabels",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Serialization(_) => "Serialization",
            Error::Image(_) => "ImageCodec",
            Error::Csv(_) => "Csv",
            Error::Io(_) => "IoFailure",
        }
    }
}
