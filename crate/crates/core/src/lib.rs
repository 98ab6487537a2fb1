//! Discontinuous Petrov-Galerkin boundary elements with optimal test
//! functions for the hypersingular integral equation on polyhedral surfaces.
//!
//! The ultra-weak formulation carries three trial unknowns: a tangential
//! field `sigma` and a scalar `phi` (both piecewise constant per triangle) and
//! a skeleton trace `sigma_hat` (piecewise constant per edge). Test functions
//! are discontinuous `(tau, v)` of degrees `(r, r + 1)`; the test inner product
//! is element-local, so the Gram matrix is block diagonal and the optimal test
//! functions reduce to local solves. The discrete solution minimizes the
//! Gram-weighted residual, which is also the energy error.

pub mod assembly;
pub mod error;
pub mod error_analysis;
pub mod experiments;
pub mod local_fem;
pub mod mesh;
pub mod potentials;
pub mod quadrature;
pub mod solver;

pub use error::{DpgError, Result};
