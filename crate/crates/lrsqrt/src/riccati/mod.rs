//! The factor-space algebraic Riccati equation and its solvers.
//!
//! A low-rank correction `X = Y Yᵀ` to a matrix square root satisfies
//!
//! ```text
//! S(Y) = E X + X E + alpha X² - GᵀG = 0
//! ```
//!
//! with `E` the (implicit) known root and `G` a thin k x n right-hand side.
//! This module provides the problem/solution types, stable residual and
//! gradient kernels that never form an n x n matrix, a dense oracle for
//! test-scale verification, and a registry of interchangeable solvers:
//!
//! * [`KrylovProjectionSolver`] (`"krylov"`, the default) — projects the
//!   equation onto an extended Krylov basis grown from `Gᵀ` and solves the
//!   small projected equation in closed form each round,
//! * [`GradientDescentSolver`] (`"gd-bb"`) — Barzilai-Borwein stepped
//!   gradient descent on `F(Y) = ||S(Y)||_F² / 4` with rank continuation;
//!   robust but slow to tighten, kept for cross-checking.
//!
//! Residual histories are relative: `||S(Y)||_F / ||GᵀG||_F`.

mod gdbb;
mod krylov;

pub use gdbb::GradientDescentSolver;
pub use krylov::KrylovProjectionSolver;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::{hcat, sym_eigen_sorted, Sign, SymmetricOperator};

/// One factor-space Riccati instance. Fields are public so callers can
/// adjust tolerances after [`RiccatiProblem::new`] fills in defaults;
/// solvers re-validate on entry.
pub struct RiccatiProblem<'a> {
    /// The known root, applied implicitly. Solvers that need `E^{-1}`
    /// (the default one does) fail with `MissingInverse` when absent.
    pub e: &'a dyn SymmetricOperator,
    /// Right-hand-side factor, k x n with k <= n.
    pub g: DMatrix<f64>,
    /// Sign of the quadratic term.
    pub alpha: Sign,
    /// Requested correction rank r >= 1.
    pub target_rank: usize,
    /// Relative residual target.
    pub tol: f64,
    /// Outer stage budget (rank continuation stages for `gd-bb`).
    pub max_outer: usize,
    /// Inner iteration budget per stage.
    pub max_inner: usize,
    /// Seed for any randomized choices a solver makes.
    pub seed: u64,
}

impl<'a> RiccatiProblem<'a> {
    /// Defaults: `tol = 1e-8`, `max_inner = 500`, `max_outer = target_rank`,
    /// `seed = 0`.
    pub fn new(
        e: &'a dyn SymmetricOperator,
        g: DMatrix<f64>,
        alpha: Sign,
        target_rank: usize,
    ) -> Result<Self> {
        let p = RiccatiProblem {
            e,
            g,
            alpha,
            target_rank,
            tol: 1e-8,
            max_outer: target_rank,
            max_inner: 500,
            seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.e.dim();
        if self.g.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} columns, operator dim is {n}",
                self.g.ncols()
            )));
        }
        if self.g.nrows() > n {
            return Err(Error::InvalidArgument(format!(
                "right-hand side rank k={} exceeds dimension n={n}",
                self.g.nrows()
            )));
        }
        if self.target_rank == 0 || self.target_rank > n {
            return Err(Error::InvalidArgument(format!(
                "target rank {} outside 1..={n}",
                self.target_rank
            )));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive and finite, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Work counters accumulated by a solve. Applies are counted in columns
/// (one column = one operator-vector product).
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub operator_applies: u64,
    pub inverse_applies: u64,
    /// Rough total flops: columns applied times the operator's per-column
    /// cost hint.
    pub flop_estimate: f64,
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// The factor, n x w with w <= target rank; `X = Y Yᵀ`.
    pub y: DMatrix<f64>,
    /// Relative residuals of accepted iterates, nonincreasing.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub stats: SolveStats,
}

pub trait RiccatiSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &RiccatiProblem) -> Result<RiccatiSolution>;
}

/// Named solver collection with a distinguished default (the first entry).
pub struct SolverRegistry {
    solvers: Vec<Box<dyn RiccatiSolver>>,
}

impl SolverRegistry {
    pub fn empty() -> Self {
        SolverRegistry {
            solvers: Vec::new(),
        }
    }

    /// `krylov` (default) followed by `gd-bb`.
    pub fn with_defaults() -> Self {
        let mut reg = SolverRegistry::empty();
        reg.register(Box::new(KrylovProjectionSolver));
        reg.register(Box::new(GradientDescentSolver));
        reg
    }

    /// Add a solver; an existing entry with the same name is replaced in
    /// place (keeping its position, so replacing the first entry swaps the
    /// default implementation).
    pub fn register(&mut self, solver: Box<dyn RiccatiSolver>) {
        if let Some(slot) = self.solvers.iter_mut().find(|s| s.name() == solver.name()) {
            *slot = solver;
        } else {
            self.solvers.push(solver);
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn RiccatiSolver> {
        self.solvers
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
    }

    /// The first registered solver; panics on an empty registry.
    pub fn default_solver(&self) -> &dyn RiccatiSolver {
        self.solvers
            .first()
            .expect("solver registry is empty")
            .as_ref()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.solvers.iter().map(|s| s.name()).collect()
    }
}

/// Solve with the default solver of the default registry.
pub fn solve(problem: &RiccatiProblem) -> Result<RiccatiSolution> {
    SolverRegistry::with_defaults().default_solver().solve(problem)
}

pub(crate) fn trivial_solution(n: usize) -> RiccatiSolution {
    RiccatiSolution {
        y: DMatrix::zeros(n, 0),
        residual_history: vec![0.0],
        converged: true,
        iterations: 0,
        stats: SolveStats::default(),
    }
}

// ---------------------------------------------------------------------------
// Thin kernels
// ---------------------------------------------------------------------------

/// `||GᵀG||_F` computed through the k x k Gram matrix.
pub(crate) fn rhs_norm(g: &DMatrix<f64>) -> f64 {
    (g * g.transpose()).norm()
}

/// The (2w+k) x (2w+k) middle block of `S(Y) = T M Tᵀ` with
/// `T = [EY | Y | Gᵀ]`.
fn snorm_middle(yty: &DMatrix<f64>, alpha: Sign, w: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * w + k, 2 * w + k);
    for i in 0..w {
        m[(i, w + i)] = 1.0;
        m[(w + i, i)] = 1.0;
    }
    m.view_mut((w, w), (w, w)).copy_from(&(yty * alpha.value()));
    for i in 0..k {
        m[(2 * w + i, 2 * w + i)] = -1.0;
    }
    m
}

/// `||S(Y)||_F` from precomputed `EY`, evaluated through a thin QR of
/// `[EY | Y | Gᵀ]` so the answer stays accurate down to machine scale
/// (a Gram-matrix route would floor near sqrt(machine epsilon)).
pub(crate) fn residual_norm_parts(
    ey: &DMatrix<f64>,
    y: &DMatrix<f64>,
    g: &DMatrix<f64>,
    alpha: Sign,
) -> f64 {
    let w = y.ncols();
    let k = g.nrows();
    if w == 0 {
        return rhs_norm(g);
    }
    let gt = g.transpose();
    let t = hcat(&[ey, y, &gt]);
    let m = snorm_middle(&y.tr_mul(y), alpha, w, k);
    let r = t.qr().r();
    ((&r * m) * r.transpose()).norm()
}

/// Absolute residual `||E YYᵀ + YYᵀ E + alpha (YYᵀ)² - GᵀG||_F`;
/// one operator apply of `w` columns.
pub fn residual_norm(problem: &RiccatiProblem, y: &DMatrix<f64>) -> Result<f64> {
    if y.nrows() != problem.e.dim() {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows, operator dim is {}",
            y.nrows(),
            problem.e.dim()
        )));
    }
    let ey = problem.e.apply(y)?;
    Ok(residual_norm_parts(&ey, y, &problem.g, problem.alpha))
}

/// `S(Y) · m` without forming `S(Y)`, given `ey = E·Y` and `yty = YᵀY`.
fn apply_s(
    y: &DMatrix<f64>,
    ey: &DMatrix<f64>,
    yty: &DMatrix<f64>,
    g: &DMatrix<f64>,
    alpha: Sign,
    m: &DMatrix<f64>,
) -> DMatrix<f64> {
    let ytm = y.tr_mul(m);
    let mut out = ey * &ytm;
    out += y * ey.tr_mul(m);
    out += (y * (yty * &ytm)) * alpha.value();
    out -= g.transpose() * (g * m);
    out
}

/// `F(Y) = ||S(Y)||_F² / 4` and its gradient
/// `∇F = E(SY) + S(EY) + alpha (SY·YᵀY + Y·YᵀSY)`; three operator applies
/// of `w` columns total.
pub(crate) fn f_and_grad(
    e: &dyn SymmetricOperator,
    y: &DMatrix<f64>,
    g: &DMatrix<f64>,
    alpha: Sign,
) -> Result<(f64, DMatrix<f64>)> {
    let ey = e.apply(y)?;
    let yty = y.tr_mul(y);
    let snorm = residual_norm_parts(&ey, y, g, alpha);
    let f = 0.25 * snorm * snorm;
    let sy = apply_s(y, &ey, &yty, g, alpha, y);
    let sp = apply_s(y, &ey, &yty, g, alpha, &ey);
    let mut grad = e.apply(&sy)?;
    grad += sp;
    grad += (&sy * &yty + y * y.tr_mul(&sy)) * alpha.value();
    Ok((f, grad))
}

pub(crate) fn f_only(
    e: &dyn SymmetricOperator,
    y: &DMatrix<f64>,
    g: &DMatrix<f64>,
    alpha: Sign,
) -> Result<f64> {
    let ey = e.apply(y)?;
    let snorm = residual_norm_parts(&ey, y, g, alpha);
    Ok(0.25 * snorm * snorm)
}

/// Public objective: `||S(Y)||_F² / 4`.
pub fn objective(problem: &RiccatiProblem, y: &DMatrix<f64>) -> Result<f64> {
    f_only(problem.e, y, &problem.g, problem.alpha)
}

/// Public gradient of [`objective`] in `Y`.
pub fn gradient(problem: &RiccatiProblem, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(f_and_grad(problem.e, y, &problem.g, problem.alpha)?.1)
}

// ---------------------------------------------------------------------------
// Dense oracle (test scale)
// ---------------------------------------------------------------------------

/// Closed-form dense solution `X* = alpha ((E² + alpha GᵀG)^{1/2} - E)`.
///
/// For `alpha = -1` this demands `E² - GᵀG` PSD; a materially negative
/// eigenvalue means no PSD solution exists and the call fails with
/// `NotPsd`.
pub fn dense_oracle(
    e: &DMatrix<f64>,
    gtg: &DMatrix<f64>,
    alpha: Sign,
) -> Result<DMatrix<f64>> {
    if e.nrows() != e.ncols() || gtg.nrows() != gtg.ncols() || e.nrows() != gtg.nrows() {
        return Err(Error::DimensionMismatch(
            "dense oracle needs square E and GᵀG of equal size".into(),
        ));
    }
    let mut m = e * e;
    m += gtg * alpha.value();
    let (lam, v) = sym_eigen_sorted(&m);
    let scale = lam.amax().max(1.0);
    if lam.len() > 0 && lam[0] < -1e-10 * scale {
        return Err(Error::NotPsd { min_eig: lam[0] });
    }
    let roots = lam.map(|l| l.max(0.0).sqrt());
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    let root = &scaled * v.transpose();
    let mut x = root - e;
    x *= alpha.value();
    Ok(0.5 * (&x + x.transpose()))
}

/// Projected small-equation solve with unconditional clamping of negative
/// eigenvalues: transiently infeasible projections must not abort the outer
/// iteration, they just yield a conservative iterate.
pub(crate) fn care_clamped(
    et: &DMatrix<f64>,
    gt: &DMatrix<f64>,
    alpha: Sign,
) -> DMatrix<f64> {
    let mut m = et * et;
    m += gt.tr_mul(gt) * alpha.value();
    let (lam, v) = sym_eigen_sorted(&m);
    let roots = lam.map(|l| l.max(0.0).sqrt());
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    let root = &scaled * v.transpose();
    let mut c = root - et;
    c *= alpha.value();
    0.5 * (&c + c.transpose())
}

/// Orthonormalize `block` against the orthonormal columns of `q` (two
/// projection passes, then a thin QR); columns whose R-diagonal falls under
/// `1e-12` times the largest incoming column norm are dropped.
pub(crate) fn orth_against(q: &DMatrix<f64>, block: &DMatrix<f64>) -> DMatrix<f64> {
    let n = block.nrows();
    if block.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let scale = block
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let mut b = block.clone_owned();
    for _ in 0..2 {
        if q.ncols() > 0 {
            b -= q * q.tr_mul(&b);
        }
    }
    let qr = b.qr();
    let (qb, rb) = (qr.q(), qr.r());
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for j in 0..qb.ncols() {
        if rb[(j, j)].abs() > 1e-12 * scale {
            kept.push(qb.column(j).clone_owned());
        }
    }
    if kept.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&kept)
    }
}
