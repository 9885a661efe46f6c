use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("degenerate softmax row {row}: every entry is masked")]
    DegenerateRow { row: usize },
    #[error("partition invariant violated: {0}")]
    Partition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("assignment capacity: {proposals} proposals cannot cover {targets} targets")]
    Capacity { proposals: usize, targets: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("scene file: {0}")]
    SceneFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short label used in command-line error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::DegenerateRow { .. } | Error::Capacity { .. } => {
                "internal"
            }
            Error::Partition(_) => "partition",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "numeric",
            Error::Checkpoint(_) => "checkpoint",
            Error::SceneFormat(_) => "scene",
            Error::Io(_) => "io",
        }
    }
}
