use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("state space too large: {what} needs {size} entries (limit {limit})")]
    TooLarge {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("particle number {n} out of range for {sites} sites")]
    ParticleNumber { n: usize, sites: usize },

    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),

    #[error("marginals are infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (residuals {primal:.2e}/{dual:.2e}/{gap:.2e})")]
    NotConverged {
        iterations: usize,
        primal: f64,
        dual: f64,
        gap: f64,
    },

    #[error("dual certificate rejected: {0}")]
    Certificate(String),

    #[error("operation requires binary state spaces")]
    NonBinary,

    #[error("missing dual potentials")]
    MissingDuals,

    #[error("degenerate highest occupied level (gap {gap:.3e} between eigenvalues {homo} and {lumo})")]
    DegenerateHomo { gap: f64, homo: f64, lumo: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
