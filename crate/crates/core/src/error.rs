//! Error type shared by all library modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape of an input does not match what the model or operation expects.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A computation produced NaN or infinity where a finite value is required.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Training diverged (loss or parameters became non-finite).
    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    /// A phase of the simulation failed; carries round and edge context.
    #[error("simulation failed at round {round}, edge {edge_id}: {source}")]
    Simulation {
        round: usize,
        edge_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
