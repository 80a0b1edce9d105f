//! Generalized least squares with spiked noise covariance.
//!
//! For noise covariance `C = D + alpha·ZZᵀ` (D diagonal SPD), the GLS
//! estimator minimizes `‖W^{1/2}(Xw − y)‖` with `W = C^{-1}`. The weight
//! root is exactly an inverse-square-root correction,
//! `W^{1/2} ≈ D^{-1/2} − alpha·UUᵀ`, so the whitened regression matrix is
//! formed with thin products and the small dense least-squares problem is
//! solved by SVD.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::{DiagonalOperator, LowRankFactor, Sign, SymmetricOperator};
use crate::sqrtupdate::{update_correction, SolverConfig, UpdateRequest};

/// Singular values below `sigma_max · max(n,d) · eps` count as zero when
/// deciding rank deficiency (and are dropped by the pseudo-inverse solve).
const RANK_REL_EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone)]
pub struct GlsSolution {
    pub coefficients: DVector<f64>,
    /// The whitened design matrix was numerically rank-deficient; the
    /// coefficients are the least-norm solution.
    pub rank_deficient: bool,
    /// `‖X̃ᵀ(X̃ŵ − ỹ)‖ / ‖X̃ᵀỹ‖` with the approximate weight root —
    /// internal consistency of the normal equations, independent of how
    /// well the correction approximates the true weights.
    pub normal_residual: f64,
}

/// Solve the spiked-noise GLS problem. `noise_diag` is `D`; the noise
/// covariance is `C = D + alpha·ZZᵀ` (feasibility is checked for
/// `alpha = −1`).
pub fn gls_solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    noise_diag: &DiagonalOperator,
    z: &DMatrix<f64>,
    alpha: Sign,
    rank: usize,
) -> Result<GlsSolution> {
    let n = noise_diag.dim();
    if x.nrows() != n || y.len() != n || z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "rows: X {}, y {}, Z {}, noise dim {n}",
            x.nrows(),
            y.len(),
            z.nrows()
        )));
    }
    let d = x.ncols();
    if d == 0 || d > n {
        return Err(Error::InvalidArgument(format!(
            "design matrix has {d} columns for {n} rows"
        )));
    }
    let correction = weight_root_correction(noise_diag, z, alpha, rank)?;
    let inv_sqrt = noise_diag.powf(-0.5);
    let whiten = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mut out = inv_sqrt.apply(m)?;
        if correction.width() > 0 {
            out += correction.apply(m);
        }
        Ok(out)
    };
    let xw = whiten(x)?;
    let yw = whiten(&DMatrix::from_column_slice(n, 1, y.as_slice()))?;

    let svd = xw.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cut = sigma_max * n.max(d) as f64 * RANK_REL_EPS;
    let numerical_rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let coeffs_mat = svd
        .solve(&yw, cut)
        .map_err(|e| Error::InvalidArgument(format!("least-squares solve failed: {e}")))?;
    let coefficients = DVector::from_column_slice(coeffs_mat.column(0).as_slice());

    let fitted = &xw * &coefficients;
    let lhs = xw.tr_mul(&(fitted - yw.column(0)));
    let rhs = xw.tr_mul(&yw);
    let denom = rhs.norm();
    let normal_residual = if denom > 0.0 { lhs.norm() / denom } else { lhs.norm() };
    Ok(GlsSolution {
        coefficients,
        rank_deficient: numerical_rank < d,
        normal_residual,
    })
}

/// The weight-root correction alone: `U` with
/// `C^{-1/2} ≈ D^{-1/2} + (signed UUᵀ)` where the stored sign is `−alpha`.
pub fn weight_root_correction(
    noise_diag: &DiagonalOperator,
    z: &DMatrix<f64>,
    alpha: Sign,
    rank: usize,
) -> Result<LowRankFactor> {
    let n = noise_diag.dim();
    if z.ncols() == 0 || z.amax() == 0.0 {
        return Ok(LowRankFactor::empty(n, alpha.flip()));
    }
    let sqrt_op = noise_diag.powf(0.5);
    let inv_sqrt_op = noise_diag.powf(-0.5);
    let req = UpdateRequest {
        sqrt_op: Some(&sqrt_op),
        inv_sqrt_op: Some(&inv_sqrt_op),
        z: z.clone(),
        alpha,
        beta: Sign::Minus,
        rank,
        solver_cfg: SolverConfig::default(),
    };
    // Best effort by design: a truncated, non-converged correction still
    // yields an internally consistent weighted least-squares problem — the
    // requested rank is the caller's accuracy/cost tradeoff.
    Ok(update_correction(&req)?.correction)
}
