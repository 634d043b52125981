use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("alphabet mismatch: expected size {expected}, got {got}")]
    AlphabetMismatch { expected: usize, got: usize },
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("invalid distortion spec: {0}")]
    InvalidDistortion(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("no convergence after {iterations} iterations (gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("composition error: {0}")]
    CompositionError(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
