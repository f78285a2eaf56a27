use std::path::PathBuf;

/// Errors produced by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or argument (bad dimensions, out-of-range
    /// indices, mismatched lengths, invariant violations).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (e.g. unclipped gradient
    /// handed to the analog transmitter, empty sample list).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Argument outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A constraint system has no solution for the requested target.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Channel inversion is undefined for a zero channel gain.
    #[error("singular channel: {0}")]
    SingularChannel(String),

    /// Server normalization is undefined for a zero power gain.
    #[error("zero power gain at symbol index {index}")]
    ZeroGain { index: usize },

    /// The sampling chain produced a non-finite parameter vector.
    #[error("chain diverged at round {round}")]
    Divergence { round: usize },

    /// File I/O failure, annotated with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Config file could not be parsed.
    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
