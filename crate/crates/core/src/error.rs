use thiserror::Error;

/// Errors produced by the toolkit.
///
/// Each variant renders as a single line so CLI front-ends can surface it
/// verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("horizon: {0}")]
    Horizon(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("insufficient edges: {0}")]
    InsufficientEdges(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("non-finite: {0}")]
    NonFinite(String),
    #[error("empty index")]
    EmptyIndex,
    #[error("missing ground truth: {0}")]
    MissingTruth(String),
    #[error("format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
