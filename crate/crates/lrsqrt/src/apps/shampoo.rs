//! Shampoo-style preconditioner tracking.
//!
//! A statistics matrix `L_t = ε·I + Σ_{s≤t} G_s G_sᵀ` accumulates gradient
//! outer products, and the optimizer needs its inverse roots. Instead of
//! refactoring `L_t` each step, the tracker holds factored approximations
//! of `L_t^{-1/2}` and `L_t^{-1/4}` and folds every incoming gradient in as
//! a pair of low-rank corrections:
//!
//! 1. an inverse-root update of `L_{t−1}` by `G_t G_tᵀ`, giving the new
//!    `L_t^{-1/2} ≈ L_{t−1}^{-1/2} − U_t U_tᵀ`, then
//! 2. a root downdate of `A′ = L_{t−1}^{-1/2}` by `U_t U_tᵀ`, giving
//!    `L_t^{-1/4} = (A′ − U_t U_tᵀ)^{1/2} ≈ L_{t−1}^{-1/4} − W_t W_tᵀ`.
//!
//! Both corrections commit only if both solves succeed; a step whose
//! downdate is infeasible (truncation pushed the factored root past
//! positive definiteness) is rejected and leaves the tracker untouched.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operators::{
    DiagonalOperator, DiagonalPlusLowRank, InverseView, Sign, SymmetricOperator,
};
use crate::sqrtupdate::{update_correction, SolverConfig, UpdateRequest};

#[derive(Debug, Clone)]
pub struct ShampooTracker {
    eps: f64,
    inv_sqrt: DiagonalPlusLowRank,
    inv_fourth: DiagonalPlusLowRank,
    step_rank: usize,
    solver_tol: f64,
    t: usize,
}

/// Outcome of one [`ShampooTracker::step`].
#[derive(Debug, Clone)]
pub struct StepReport {
    pub accepted: bool,
    /// Backward error of the committed `L_t^{-1/2}` correction. NaN when
    /// the step was rejected before the quantity existed.
    pub residual_sqrt: f64,
    /// Backward error of the committed `L_t^{-1/4}` correction; NaN on
    /// rejection.
    pub residual_fourth: f64,
    /// Eigenvalue mass dropped compressing the inverse-root factor.
    pub discarded_sqrt: f64,
    /// Eigenvalue mass dropped compressing the inverse-fourth-root factor.
    pub discarded_fourth: f64,
    /// Minimum eigenvalue of the feasibility Gram when the downdate was
    /// rejected.
    pub reject_min_eig: Option<f64>,
}

impl ShampooTracker {
    /// Start at `L_0 = ε·I`: both tracked operators are scaled identities.
    pub fn new(m: usize, eps: f64, step_rank: usize, compression_cap: usize) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "damping must be positive and finite, got {eps}"
            )));
        }
        if step_rank == 0 {
            return Err(Error::InvalidArgument("step rank must be at least 1".into()));
        }
        let inv_sqrt = DiagonalPlusLowRank::new(
            DiagonalOperator::scaled_identity(m, eps.powf(-0.5))?,
            compression_cap,
        )?;
        let inv_fourth = DiagonalPlusLowRank::new(
            DiagonalOperator::scaled_identity(m, eps.powf(-0.25))?,
            compression_cap,
        )?;
        Ok(ShampooTracker {
            eps,
            inv_sqrt,
            inv_fourth,
            step_rank,
            solver_tol: SolverConfig::default().tol,
            t: 0,
        })
    }

    /// Relative residual target for the per-step Riccati solves.
    pub fn with_solver_tol(mut self, tol: f64) -> Self {
        self.solver_tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.inv_sqrt.dim()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Committed gradients so far (rejected steps don't count).
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn inv_sqrt(&self) -> &DiagonalPlusLowRank {
        &self.inv_sqrt
    }

    pub fn inv_fourth(&self) -> &DiagonalPlusLowRank {
        &self.inv_fourth
    }

    /// `L_t^{-1/4} · g`, the preconditioned gradient block.
    pub fn precondition(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inv_fourth.apply(g)
    }

    /// Fold one gradient block into the tracked inverse roots.
    pub fn step(&mut self, g: &DMatrix<f64>) -> Result<StepReport> {
        let m = self.dim();
        if g.nrows() != m {
            return Err(Error::DimensionMismatch(format!(
                "gradient has {} rows, tracker dimension is {m}",
                g.nrows()
            )));
        }
        if g.ncols() == 0 || g.amax() == 0.0 {
            self.t += 1;
            return Ok(StepReport {
                accepted: true,
                residual_sqrt: 0.0,
                residual_fourth: 0.0,
                discarded_sqrt: 0.0,
                discarded_fourth: 0.0,
                reject_min_eig: None,
            });
        }

        let mut cfg = SolverConfig::default();
        cfg.tol = self.solver_tol;

        // Inverse-root update: base L_{t−1} is only available through its
        // tracked inverse root, so the forward root is its inverse view.
        let sqrt_view = InverseView::new(&self.inv_sqrt)?;
        let req_sqrt = UpdateRequest {
            sqrt_op: Some(&sqrt_view),
            inv_sqrt_op: Some(&self.inv_sqrt),
            z: g.clone_owned(),
            alpha: Sign::Plus,
            beta: Sign::Minus,
            rank: self.step_rank,
            solver_cfg: cfg.clone(),
        };
        // Best effort: a rank-capped correction routinely stalls above the
        // solver tolerance once L is ill-conditioned. The stalled residual
        // is reported, not escalated — bounded per-step error that does not
        // accumulate is exactly what the tracker is for.
        let res_sqrt = update_correction(&req_sqrt)?;

        // Root downdate of A′ = L_{t−1}^{-1/2}; its root is the tracked
        // inverse fourth root. Infeasibility here is a rejection, not an
        // error: the tracker simply skips the gradient.
        let inv_view = InverseView::new(&self.inv_fourth)?;
        let req_fourth = UpdateRequest {
            sqrt_op: Some(&self.inv_fourth),
            inv_sqrt_op: Some(&inv_view),
            z: res_sqrt.correction.cols().clone_owned(),
            alpha: Sign::Minus,
            beta: Sign::Plus,
            rank: self.step_rank,
            solver_cfg: cfg,
        };
        let res_fourth = match update_correction(&req_fourth) {
            Ok(r) => r,
            Err(Error::InfeasibleDowndate { min_eig, .. }) => {
                return Ok(StepReport {
                    accepted: false,
                    residual_sqrt: res_sqrt.residual_norm,
                    residual_fourth: f64::NAN,
                    discarded_sqrt: 0.0,
                    discarded_fourth: 0.0,
                    reject_min_eig: Some(min_eig),
                });
            }
            Err(e) => return Err(e),
        };

        // Both solves succeeded: commit both corrections atomically.
        let (inv_sqrt, discarded_sqrt) = self.inv_sqrt.append_term(res_sqrt.correction.clone())?;
        let (inv_fourth, discarded_fourth) =
            self.inv_fourth.append_term(res_fourth.correction.clone())?;
        self.inv_sqrt = inv_sqrt;
        self.inv_fourth = inv_fourth;
        self.t += 1;
        Ok(StepReport {
            accepted: true,
            residual_sqrt: res_sqrt.residual_norm,
            residual_fourth: res_fourth.residual_norm,
            discarded_sqrt,
            discarded_fourth,
            reject_min_eig: None,
        })
    }
}
