use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum AvnError {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("no path between {from} and {to}")]
    NoPath { from: usize, to: usize },

    #[error("world generation failed: {0}")]
    Generation(String),

    #[error("vocabulary error: unknown token id {0}")]
    UnknownToken(usize),

    #[error("cannot coarsen instruction: {0}")]
    CannotCoarsen(String),

    #[error("optimizer state error: {0}")]
    OptimState(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("labeling not supported: {0}")]
    UnsupportedLabeling(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AvnError>;

impl AvnError {
    pub fn dim(op: &'static str, lhs: impl std::fmt::Display, rhs: impl std::fmt::Display) -> Self {
        AvnError::Dimension {
            op,
            lhs: lhs.to_string(),
            rhs: rhs.to_string(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        AvnError::Io {
            path: path.into(),
            source,
        }
    }
}
