use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("constraint mismatch: {0}")]
    ConstraintMismatch(String),

    #[error("degenerate table: {0}")]
    DegenerateTable(String),

    #[error("infeasible IPF update: target {target} over zero current marginal at cell {cell}")]
    InfeasibleUpdate { cell: String, target: f64 },

    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("infeasible split at {cell}: weighted hazard sum is zero for positive rate {rate}")]
    InfeasibleSplit { cell: String, rate: f64 },

    #[error("rate overflow at {cell}: split rate {rate} exceeds 1")]
    RateOverflow { cell: String, rate: f64 },

    #[error("division by a zero reference rate")]
    DivisionDegenerate,

    #[error("invalid Poisson intensity {value} at cell {cell}")]
    InvalidIntensity { cell: usize, value: f64 },

    #[error("insufficient sample: need at least {needed} values, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("degenerate basis for `{covariate}`: {reason}")]
    DegenerateBasis { covariate: String, reason: String },

    #[error("smoothing selection failed: every candidate fit failed")]
    SelectionFailure,

    #[error("unknown level `{level}` for dimension `{dimension}`")]
    UnknownLevel { dimension: String, level: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: table file has a header but no data rows")]
    EmptyTable { path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            message: message.into(),
        }
    }
}
