use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{primitive}: shape mismatch: {detail}")]
    ShapeMismatch { primitive: &'static str, detail: String },

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("tensor contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("segment {segment} has no annotation samples in [{start_ms}, {end_ms}) ms")]
    EmptyOverlap { segment: String, start_ms: u64, end_ms: u64 },

    #[error("segment {segment}: viewer {viewer} track ends at {track_end_ms} ms, before the segment ends")]
    TrackTooShort { segment: String, viewer: usize, track_end_ms: u64 },

    #[error("no viewer annotation is present")]
    AllAbsent,

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("target `{0}` has only one class in the training labels")]
    SingleClass(String),

    #[error("empty mask: no labels are present")]
    EmptyMask,

    #[error("correlation undefined: zero variance input")]
    UndefinedCorrelation,

    #[error("segment {segment} overlaps no visual chunk")]
    NoOverlappingChunk { segment: String },

    #[error("unknown fold protocol `{0}`")]
    UnknownProtocol(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("training diverged: {0}")]
    NonFiniteLoss(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(primitive: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { primitive, detail: detail.into() }
    }
}
