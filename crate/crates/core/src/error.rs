use std::path::PathBuf;

use crate::synthdrive::DriveTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration or parameter bounds.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Accelerate/decelerate branches need `v_r - theta0 > 0`.
    #[error("degenerate reference: v_r = {v_r} does not exceed theta0 = {theta0}")]
    DegenerateReference { v_r: f64, theta0: f64 },

    /// The simulation did not finish the route before the time cap. The
    /// trace recorded so far is attached.
    #[error("simulation exceeded the {max_time} s time cap at position {position:.1} m")]
    Timeout {
        max_time: f64,
        position: f64,
        partial: Box<DriveTrace>,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient history: need {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
