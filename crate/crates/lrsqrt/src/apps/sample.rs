//! Gaussian sampling with a low-rank-perturbed precision matrix.
//!
//! To draw from `N(mu, Q^{-1})` with `Q = Q₀ + ZZᵀ`, it suffices to apply
//! `Q^{-1/2}` to standard normal vectors. The correction machinery gives
//! `Q^{-1/2} ≈ Q₀^{-1/2} − UUᵀ`, so each draw costs two thin products on
//! top of one `Q₀^{-1/2}` apply.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::operators::{InverseView, LowRankFactor, Sign, SymmetricOperator};
use crate::sqrtupdate::{update_correction, SolverConfig, UpdateRequest};

/// Draw `count` samples from `N(mu, (Q₀ + ZZᵀ)^{-1})`, returned as the
/// columns of an n x count matrix. Deterministic per seed.
///
/// `q0_inv_sqrt` must expose its inverse (`Q₀^{1/2}` is needed by the
/// inner update solve); a `DiagonalOperator` or any SMW-backed composite
/// qualifies.
pub fn gaussian_sample(
    mu: &DVector<f64>,
    q0_inv_sqrt: &dyn SymmetricOperator,
    z: &DMatrix<f64>,
    rank: usize,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = q0_inv_sqrt.dim();
    if mu.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "mean has length {}, operator dim is {n}",
            mu.len()
        )));
    }
    if z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} rows, operator dim is {n}",
            z.nrows()
        )));
    }
    let correction = precision_update_correction(q0_inv_sqrt, z, rank)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals = DMatrix::from_fn(n, count, |_, _| StandardNormal.sample(&mut rng));
    let mut x = q0_inv_sqrt.apply(&normals)?;
    if correction.width() > 0 {
        x += correction.apply(&normals);
    }
    for mut col in x.column_iter_mut() {
        col += mu;
    }
    Ok(x)
}

/// The factored correction alone: `U` (sign −1) with
/// `(Q₀ + ZZᵀ)^{-1/2} ≈ Q₀^{-1/2} + (signed UUᵀ)`.
pub fn precision_update_correction(
    q0_inv_sqrt: &dyn SymmetricOperator,
    z: &DMatrix<f64>,
    rank: usize,
) -> Result<LowRankFactor> {
    let n = q0_inv_sqrt.dim();
    if z.ncols() == 0 || z.amax() == 0.0 {
        return Ok(LowRankFactor::empty(n, Sign::Minus));
    }
    let sqrt_view = InverseView::new(q0_inv_sqrt)?;
    let req = UpdateRequest {
        sqrt_op: Some(&sqrt_view),
        inv_sqrt_op: Some(q0_inv_sqrt),
        z: z.clone(),
        alpha: Sign::Plus,
        beta: Sign::Minus,
        rank,
        solver_cfg: SolverConfig::default(),
    };
    let res = update_correction(&req)?;
    if !res.riccati_diag.converged {
        return Err(Error::NoConvergence(format!(
            "precision-root correction stalled at relative residual {:.3e}",
            res.riccati_diag
                .residual_history
                .last()
                .copied()
                .unwrap_or(f64::NAN)
        )));
    }
    Ok(res.correction)
}
