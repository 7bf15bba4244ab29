use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell inside the singular set of the kernel or outside an
    /// operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two particles are at distance `gap`, which is not above the shift `delta`.
    #[error("inadmissible pair ({i}, {j}): distance {gap} does not exceed delta {delta}")]
    Inadmissible {
        i: usize,
        j: usize,
        gap: f64,
        delta: f64,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("step limit of {0} accepted steps exceeded")]
    StepLimit(u64),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
