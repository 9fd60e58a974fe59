//! Numerical laboratory for the inverse boundary value problem of the
//! magnetic Schrödinger operator `L_{A,q} u = -(grad + iA).(grad + iA)u + qu`.
//!
//! The crate builds every constructive ingredient of the log-type stability
//! theory on a periodic FFT box and measures the estimates empirically:
//!
//! * spectral exterior calculus on complex fields of degree 0/1/2 ([`grid`]),
//! * Littlewood-Paley blocks, Besov/Sobolev norms and admissibility checks
//!   ([`besov`]),
//! * the mollifier split `A = smooth + rough` with quantitative rates
//!   ([`mollify`]),
//! * complex geometric optics solutions `u = e^{x.zeta/h}(a + r)` ([`cgo`]),
//! * a finite-difference Dirichlet solver and boundary flux pairings
//!   ([`forward`]),
//! * finite-dimensional Cauchy data sets and the pseudo-metric `dist`
//!   ([`cauchy`]),
//! * the Hodge decomposition on a ball with the cutoff gauge ([`hodge`]),
//! * Fourier extraction of the magnetic field and electric potential
//!   differences plus the stability schedules ([`reconstruct`]).

pub mod besov;
pub mod cauchy;
pub mod cgo;
pub mod error;
pub mod forward;
pub mod gen;
pub mod grid;
pub mod hodge;
pub mod io;
pub mod linalg;
pub mod mollify;
pub mod potential;
pub mod reconstruct;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
pub use grid::{
    d_form, delta_form, inner_product, make_grid, AnyField, FormDegree, Grid, ScalarField,
    TwoFormField, VectorField,
};
pub use potential::PotentialPair;
