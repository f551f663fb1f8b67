use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{path}: line {line}, column `{column}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: String,
        message: String,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("source/treatment mismatch on row {row}: source={source_flag}, treatment={treatment}")]
    SourceTreatmentMismatch {
        row: usize,
        source_flag: u8,
        treatment: u8,
    },

    #[error("missing outcome on row {row} in a dataset that is not in aggregate-data mode")]
    MissingOutcome { row: usize },

    #[error("empty {0} group")]
    EmptyGroup(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("separation: coefficients diverge while the likelihood keeps improving")]
    Separation,

    #[error("non-overlap: infinite weight for subject {row}")]
    NonOverlap { row: usize },

    #[error("infeasible balance: {0}")]
    InfeasibleBalance(String),

    #[error("unbounded HT mean: {0} is outside (0, 1)")]
    UnboundedHtMean(f64),

    #[error("infinite log-odds: mean {0} is not strictly inside (0, 1)")]
    InfiniteLogOdds(f64),

    #[error("unstable bootstrap: {failed} of {total} resamples failed")]
    UnstableBootstrap { failed: usize, total: usize },

    #[error("ATT requires control IPD")]
    AttRequiresControlIpd,

    #[error("correlation matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("no data: {0}")]
    NoData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
