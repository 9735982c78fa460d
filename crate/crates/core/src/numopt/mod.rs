//! Numerical kernels shared by the ranging models and the position solver.
//!
//! Everything here is single-threaded and deterministic: the same inputs
//! always produce bit-identical outputs, which the oracle tests rely on.

mod banded;
mod lstsq;
mod smo;
mod trust_region;

pub(crate) use banded::solve_banded_many;
pub use banded::{solve_banded, BandedSystem};
pub use lstsq::linear_least_squares;
pub use smo::{smo_svr, svr_primal_objective, SvrProblem, SvrSolution, SvrStatus};
pub use trust_region::{
    finite_difference_jacobian, trust_region_nls, FnProblem, LeastSquaresProblem, TrustRegionConfig, TrustRegionResult,
    TrustRegionStatus,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumoptError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, NumoptError>;
