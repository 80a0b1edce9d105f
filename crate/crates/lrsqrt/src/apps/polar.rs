//! Rank-one maintenance of a thin polar decomposition `X = U_f · P`.
//!
//! `P = (XᵀX)^{1/2}` lives in the small `d × d` space, so appending or
//! removing a data row is a rank-one update or downdate of `P` — handled by
//! the square-root correction machinery — while the tall orthonormal factor
//! is repaired with a Sherman-Morrison-Woodbury product, never refactored.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::{DenseSymmetric, Sign, SymmetricOperator};
use crate::sqrtupdate::{update_correction, SolverConfig, UpdateRequest};

/// How far `U_fᵀU_f` may drift from the identity before a freshly built
/// state is rejected as numerically non-orthonormal.
const ORTHO_GATE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PolarState {
    u_factor: DMatrix<f64>,
    p: DenseSymmetric,
    p_inv: DenseSymmetric,
}

impl PolarState {
    /// Factor `x` directly. Fails if `xᵀx` is numerically singular or the
    /// resulting orthonormal factor fails its gate.
    pub fn from_data(x: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if n < d || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "polar factorization needs n ≥ d ≥ 1, got {n} × {d}"
            )));
        }
        let mut gram = x.tr_mul(x);
        let gt = gram.transpose();
        gram += gt;
        gram *= 0.5;
        let gram = DenseSymmetric::new(gram)?;
        let p = gram.principal_root(2, false)?;
        let p_inv = gram.principal_root(2, true)?;
        let u_factor = x * p_inv.matrix();
        let drift = (u_factor.tr_mul(&u_factor) - DMatrix::identity(d, d)).norm();
        if drift > ORTHO_GATE * (d as f64).sqrt().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "orthonormal factor drift {drift:.3e} exceeds gate; data too ill-conditioned"
            )));
        }
        Ok(Self { u_factor, p, p_inv })
    }

    pub fn rows(&self) -> usize {
        self.u_factor.nrows()
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn u_factor(&self) -> &DMatrix<f64> {
        &self.u_factor
    }

    pub fn p(&self) -> &DenseSymmetric {
        &self.p
    }

    /// `U_f · P`, the data matrix this state represents.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u_factor * self.p.matrix()
    }

    // Post-correction states skip the drift gate: each maintenance step
    // introduces bounded error that the chained-accuracy tests track.
    fn assemble(u_factor: DMatrix<f64>, p: DenseSymmetric) -> Result<Self> {
        let p_inv = p.inverse()?;
        Ok(Self { u_factor, p, p_inv })
    }
}

/// Remove row `removed_row` of the represented data matrix. The downdated
/// polar factor is `P₋ = (P² − zzᵀ)^{1/2}` with `z = P·U_fᵀe_i`, corrected
/// at the given factor rank.
pub fn polar_downdate(state: &PolarState, removed_row: usize, rank: usize) -> Result<PolarState> {
    let n = state.rows();
    let d = state.dim();
    if removed_row >= n {
        return Err(Error::InvalidArgument(format!(
            "row {removed_row} out of range for {n} rows"
        )));
    }
    if n - 1 < d {
        return Err(Error::InvalidArgument(format!(
            "removing a row of a {n} × {d} factorization would make it rank-deficient"
        )));
    }
    let z_row = state.u_factor.row(removed_row) * state.p.matrix();
    let z = DMatrix::from_column_slice(d, 1, z_row.transpose().as_slice());
    let req = UpdateRequest {
        sqrt_op: Some(&state.p as &dyn SymmetricOperator),
        inv_sqrt_op: Some(&state.p_inv as &dyn SymmetricOperator),
        z,
        alpha: Sign::Minus,
        beta: Sign::Plus,
        rank,
        solver_cfg: SolverConfig::default(),
    };
    let res = update_correction(&req)?;
    let uc = res.correction.cols().clone_owned();

    let y = state.u_factor.clone().remove_row(removed_row);
    let new_u = if uc.ncols() == 0 {
        y
    } else {
        // X₋ (P − UUᵀ)^{-1} expanded by Woodbury in the width-w core.
        let pinv_u = state.p_inv.apply(&uc)?;
        let w = uc.ncols();
        let m = DMatrix::identity(w, w) - uc.tr_mul(&pinv_u);
        let m_inv = m.try_inverse().ok_or(Error::SingularOperator)?;
        &y + (&y * &uc) * m_inv * pinv_u.transpose()
    };
    let mut p_new = state.p.matrix().clone_owned();
    if uc.ncols() > 0 {
        p_new -= &uc * uc.transpose();
    }
    PolarState::assemble(new_u, DenseSymmetric::new(p_new)?)
}

/// Append `new_row` to the represented data matrix:
/// `P₊ = (P² + rrᵀ)^{1/2}` corrected at the given factor rank, and the
/// orthonormal factor gains one row.
pub fn polar_update(state: &PolarState, new_row: &DVector<f64>, rank: usize) -> Result<PolarState> {
    let d = state.dim();
    if new_row.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "new row has {} entries, factorization is {d}-dimensional",
            new_row.len()
        )));
    }
    let z = DMatrix::from_column_slice(d, 1, new_row.as_slice());
    let req = UpdateRequest {
        sqrt_op: Some(&state.p as &dyn SymmetricOperator),
        inv_sqrt_op: Some(&state.p_inv as &dyn SymmetricOperator),
        z: z.clone(),
        alpha: Sign::Plus,
        beta: Sign::Plus,
        rank,
        solver_cfg: SolverConfig::default(),
    };
    let res = update_correction(&req)?;
    let uc = res.correction.cols().clone_owned();

    let n = state.rows();
    let mut y_plus = DMatrix::zeros(n + 1, d);
    y_plus.view_mut((0, 0), (n, d)).copy_from(&state.u_factor);
    let bottom = state.p_inv.apply(&z)?;
    y_plus
        .view_mut((n, 0), (1, d))
        .copy_from(&bottom.transpose());

    let new_u = if uc.ncols() == 0 {
        y_plus
    } else {
        // X₊ (P + UUᵀ)^{-1} expanded by Woodbury.
        let pinv_u = state.p_inv.apply(&uc)?;
        let w = uc.ncols();
        let m = DMatrix::identity(w, w) + uc.tr_mul(&pinv_u);
        let m_inv = m.try_inverse().ok_or(Error::SingularOperator)?;
        &y_plus - (&y_plus * &uc) * m_inv * pinv_u.transpose()
    };
    let mut p_new = state.p.matrix().clone_owned();
    if uc.ncols() > 0 {
        p_new += &uc * uc.transpose();
    }
    PolarState::assemble(new_u, DenseSymmetric::new(p_new)?)
}
