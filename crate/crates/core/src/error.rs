//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain (e.g. a rank outside [0,1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration or parameter value failed validation.
    #[error("invalid parameter: {0}")]
    Invalid(String),

    /// A design matrix was rank deficient where full rank is required.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// Inputs contained NaN or infinite entries.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// An optimizer or likelihood evaluation degenerated (NaN objective, all-floored
    /// densities, ...). Carries a human-readable diagnostic.
    #[error("numerical pathology: {0}")]
    Pathology(String),

    /// Quantile-regression warm start failed at a specific grid point.
    #[error("quantile regression failed at grid index {index}: {source}")]
    QrGridFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Too few observations survived a trimming rule.
    #[error("trim too aggressive: {0}")]
    TrimTooAggressive(String),

    /// Too many bootstrap replications failed.
    #[error("bootstrap aborted: {0}")]
    BootstrapAborted(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
