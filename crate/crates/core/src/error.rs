//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the numerical laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid parameter: {0}")]
    GridParam(String),

    #[error("fields live on different grids (lhs {lhs_n}^3 @ L={lhs_l}, rhs {rhs_n}^3 @ L={rhs_l})")]
    GridMismatch {
        lhs_n: usize,
        lhs_l: f64,
        rhs_n: usize,
        rhs_l: f64,
    },

    #[error("operation not defined for form degree {0}")]
    DegreeUnsupported(u8),

    #[error("Littlewood-Paley block {requested} beyond Nyquist coverage (max representable j = {max})")]
    BlockBeyondNyquist { requested: usize, max: usize },

    #[error("mollifier scale {tau} below resolvable limit (minimum {min})")]
    UnresolvableScale { tau: f64, min: f64 },

    #[error("field support too close to the box boundary: needs collar {needed}, available {available}")]
    SupportCollar { needed: f64, available: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("iterative solver failed to converge: {context} (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence {
        context: String,
        residual: f64,
        iterations: usize,
    },

    #[error("discrete operator is singular or near-singular (interior eigenvalue): {0}")]
    InteriorEigenvalue(String),

    #[error("matrix ill-conditioned: {context} (condition estimate {cond:.3e})")]
    IllConditioned { context: String, cond: f64 },

    #[error("file format error: {0}")]
    Format(String),

    #[error("fingerprint mismatch: stored {stored}, computed {computed}")]
    Fingerprint { stored: String, computed: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
