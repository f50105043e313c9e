use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("capacity exceeded: {what} needs {needed} entries, limit is {limit}")]
    Capacity {
        what: &'static str,
        needed: u128,
        limit: u128,
    },

    #[error("value iteration did not converge within {iterations} sweeps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("k-median: {0}")]
    Clustering(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("codeword {codeword} is ambiguous: members disagree on the optimal action ({first} vs {second})")]
    AmbiguousControl {
        codeword: usize,
        first: usize,
        second: usize,
    },

    #[error("malformed message: {0}")]
    MalformedMessage(String),

    #[error("invalid distribution: {0}")]
    InvalidPmf(String),

    #[error("empty trajectory log")]
    EmptyLog,

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid heuristic config: {0}")]
    Heuristic(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used by the CLI for its error reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) | Error::Config(_) | Error::Heuristic(_) => "config",
            Error::InvalidState(_) | Error::MalformedMessage(_) => "input",
            Error::Capacity { .. } => "capacity",
            Error::NoConvergence { .. } | Error::Diverged(_) => "numerical",
            Error::Clustering(_) | Error::InvalidCodebook(_) | Error::AmbiguousControl { .. } => {
                "quantizer"
            }
            Error::InvalidPmf(_) | Error::EmptyLog | Error::MissingData(_) => "metrics",
            Error::Phase { source, .. } => source.category(),
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => "format",
            Error::Io(_) => "io",
        }
    }

    /// Wraps an error with the name of the pipeline phase it came from.
    pub fn in_phase(phase: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Phase {
            phase,
            source: Box::new(source),
        }
    }
}
