//! Low-rank factored corrections to matrix square roots.
//!
//! Given implicit access to a symmetric positive definite `A` through its
//! square root and/or inverse square root, a thin perturbation `Z` (n x k),
//! and signs `alpha, beta = ±1`, this crate computes a thin factor `U` with
//!
//! ```text
//! (A + alpha Z Zᵀ)^(beta/2)  ≈  A^(beta/2) + alpha·beta · U Uᵀ
//! ```
//!
//! at a chosen rank `r`, without ever forming an n x n matrix. The heavy
//! lifting is a small factored algebraic Riccati equation in the factor
//! space ([`riccati`]); [`sqrtupdate`] reduces all four `(alpha, beta)`
//! combinations to it; [`analysis`] provides residual/error certificates and
//! singular-value decay bounds; [`apps`] builds whitening, sampling, polar,
//! preconditioner-tracking, and generalized least squares workflows on top.
//!
//! Entry points:
//! * [`sqrtupdate::update_correction`] — one correction from an
//!   [`sqrtupdate::UpdateRequest`],
//! * [`riccati::solve`] / [`riccati::SolverRegistry`] — the factor-space
//!   Riccati solvers behind it,
//! * [`analysis::error_report`] — certified error bounds from a residual.

pub mod analysis;
pub mod apps;
pub mod error;
pub mod operators;
pub mod riccati;
pub mod sqrtupdate;

pub use error::{Error, Result};
pub use operators::{Sign, SymmetricOperator};
