use thiserror::Error;

/// Everything that can go wrong across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: expected two integer node ids, got {found:?}")]
    EdgeParse {
        path: String,
        line: usize,
        found: String,
    },

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("graph needs at least {need} nodes, has {have}")]
    TooFewNodes { need: usize, have: usize },

    #[error("node {0} out of range")]
    NodeOutOfRange(usize),

    #[error("stationary distribution did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("invalid degree target: {0}")]
    BadDegreeTarget(String),

    #[error("empty degree sequence")]
    EmptySequence,

    #[error("checkpoint: unsupported format version {0}")]
    CheckpointVersion(u32),

    #[error("checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("config: {0}")]
    Config(String),

    #[error("labels: {0}")]
    Labels(String),

    #[error("training diverged at iteration {iter}: loss {loss}")]
    Diverged { iter: usize, loss: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
