use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("axis {axis} is invalid for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },

    #[error("{op}: value {value} is outside the domain")]
    Domain { op: &'static str, value: f64 },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tensor is detached: it was not recorded on this tape or does not require grad")]
    Detached,

    #[error("id {id} is out of range for a vocabulary of {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: header mismatch, expected {expected:?}, found {found:?}", path.display())]
    Header {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("window out of range: {0}")]
    Window(String),

    #[error("empty range: {0}")]
    EmptyRange(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint config digest {found} does not match config digest {expected}")]
    DigestMismatch { expected: String, found: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
