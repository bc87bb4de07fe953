use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by the command line front end to pick an
/// exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Solver,
    Internal,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Solver => 3,
            ErrorCategory::Internal => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}: row {row}, column {column}: {message}")]
    Parse {
        source_name: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("block `{block}`: column `{column}` has zero variance and cannot be scaled")]
    DegenerateColumn { block: String, column: String },

    #[error(
        "block `{block}`: rank {rank} equals the number of individuals ({n}); \
         mode B is meaningless here, use a shrinkage constant tau > 0"
    )]
    ModeBInfeasible { block: String, rank: usize, n: usize },

    #[error(
        "block `{block}` does not contribute to the superblock component \
         (zero cross-product); drop it from the analysis"
    )]
    NonContributingBlock { block: String },

    #[error("gradient is singular: ||Q_b v|| vanished for block `{block}` with m < 2")]
    SingularGradient { block: String },

    #[error("bad starting point: {0}")]
    BadStart(String),

    #[error("unknown preset `{name}`; available presets: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("no closed-form stationary equation to verify for `{0}`")]
    UnsupportedVerification(String),

    #[error("contributions are undefined when every covariance is zero")]
    UndefinedContributions,

    #[error("every start failed; first failure: {0}")]
    AllStartsFailed(Box<Error>),

    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("internal assertion failed: {0}")]
    InternalAssertion(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::UnknownPreset { .. } => ErrorCategory::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Dimension(_)
            | Error::DegenerateColumn { .. }
            | Error::ModeBInfeasible { .. }
            | Error::NonContributingBlock { .. }
            | Error::UndefinedContributions
            | Error::UnsupportedVerification(_) => ErrorCategory::Data,
            Error::SingularGradient { .. } | Error::BadStart(_) | Error::NotConverged { .. } => {
                ErrorCategory::Solver
            }
            Error::AllStartsFailed(inner) => inner.category(),
            Error::InternalAssertion(_) => ErrorCategory::Internal,
        }
    }
}
