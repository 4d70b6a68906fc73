use std::path::PathBuf;

use crate::penalized::LassoSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unbalanced panel: unit {unit:?} has no observation for period {period:?}")]
    MissingCell { unit: String, period: String },

    #[error("non-finite value in column {column:?} for unit {unit:?}, period {period:?}")]
    NonFiniteValue {
        column: String,
        unit: String,
        period: String,
    },

    #[error("conflicting duplicate rows for unit {unit:?}, period {period:?}")]
    DuplicateConflict { unit: String, period: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operator is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("randomized sketch degenerate after retry")]
    DegenerateSketch,

    #[error(
        "quadratic coefficient matrix is singular (rcond {rcond:.3e}, eigenvalues in [{min_eig:.3e}, {max_eig:.3e}])"
    )]
    SingularSigma {
        rcond: f64,
        min_eig: f64,
        max_eig: f64,
    },

    #[error("could not draw a split with both halves non-empty after {attempts} attempts")]
    DegenerateSplit { attempts: usize },

    #[error("number of periods {periods} is smaller than the number of groups {groups}")]
    TSmallerThanG { periods: usize, groups: usize },

    #[error("group {0} has no members")]
    EmptyGroup(usize),

    #[error("demeaned covariate Gram matrix is singular (rcond {rcond:.3e})")]
    SingularGram { rcond: f64 },

    #[error("coordinate descent stopped after {} sweeps with KKT residual {:.3e}", .solution.iterations, .solution.kkt_residual)]
    MaxIterExceeded { solution: Box<LassoSolution> },

    #[error("quadratic term is indefinite (smallest eigenvalue {min_eig:.3e}) and no PSD floor was set")]
    NotConditioned { min_eig: f64 },

    #[error("dynamic model needs at least 3 periods, got {0}")]
    TooFewPeriods(usize),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by bad inputs rather than by numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::SchemaMismatch(_)
                | Error::MissingCell { .. }
                | Error::NonFiniteValue { .. }
                | Error::DuplicateConflict { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidParameter(_)
                | Error::TSmallerThanG { .. }
                | Error::TooFewPeriods(_)
                | Error::Config(_)
        )
    }
}
