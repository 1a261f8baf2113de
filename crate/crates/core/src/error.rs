use thiserror::Error;

use crate::estimation::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {index}: all membership flags are zero (individuals missed by every list cannot be observed)")]
    AllZeroRecord { index: usize },

    #[error("record {index}: expected {expected} membership flags, found {found}")]
    FlagCount {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("complete table required")]
    CompleteTableRequired,

    #[error("model is not identified: {cells} observed cells for {params} parameters")]
    Unidentified { cells: usize, params: usize },

    #[error("Gauss-Hermite quadrature did not converge: |L40 - L80| = {delta:e}")]
    Quadrature { delta: f64 },

    #[error("optimizer did not converge after {restarts} starts (best gradient sup-norm {gradient:e})")]
    NotConverged {
        restarts: usize,
        gradient: f64,
        best: Box<FitResult>,
    },

    #[error("design matrix is rank deficient; collinear terms: {0}")]
    RankDeficient(String),

    #[error("missing-cell estimator undefined: {0}")]
    MissingCell(String),

    #[error("no admissible model; candidates:\n{0}")]
    NoAdmissibleModel(String),

    #[error("{failed} of {total} bootstrap replicates failed (limit is below 1%)")]
    TooManyFailedReplicates { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors that come from the numerics rather than from the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::NotConverged { .. }
                | Error::RankDeficient(_)
                | Error::MissingCell(_)
                | Error::NoAdmissibleModel(_)
                | Error::TooManyFailedReplicates { .. }
        )
    }
}
