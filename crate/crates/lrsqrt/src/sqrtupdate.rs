//! Factored corrections to matrix roots under rank-k perturbations.
//!
//! Given implicit access to `A^{1/2}` and/or `A^{-1/2}`, computes a width-r
//! factor `U` with
//!
//! ```text
//! (A + alpha·ZZᵀ)^{beta/2}  ≈  A^{beta/2} + alpha·beta·UUᵀ
//! ```
//!
//! The two like-signed branches `(+,+)` and `(−,−)` reduce directly to a
//! factor-space Riccati solve (the `(−,−)` case after a Woodbury transform
//! of `Z` that turns the downdate into an update of the inverse). The
//! mixed-sign branches are *not* solved directly — a direct subtraction
//! could leave `A^{1/2} − UUᵀ` indefinite — but obtained from the
//! like-signed solutions through an exact Sherman–Morrison–Woodbury
//! conversion, which preserves positive definiteness by construction.
//!
//! Branch dispatch goes through the [`CorrectionStrategy`] table; each
//! strategy names the operators it needs and reuses the shared solve
//! helpers rather than re-entering the public entry point.

use nalgebra::DMatrix;

use crate::analysis;
use crate::error::{Error, Result};
use crate::operators::{
    dense_principal_root, sym_eigen_sorted, LowRankFactor, Sign, SymmetricOperator,
};
use crate::riccati::{self, RiccatiProblem, RiccatiSolution, RiccatiSolver};

/// Downdates require `I − ZᵀA^{-1}Z` to be positive definite; "definite"
/// is enforced with this much floating-point slack above zero.
pub const DEFAULT_FEASIBILITY_MARGIN: f64 = 1e-10;

/// Riccati-solver settings carried by an [`UpdateRequest`].
#[derive(Clone)]
pub struct SolverConfig<'a> {
    /// Relative residual target for the inner solve.
    pub tol: f64,
    pub seed: u64,
    /// Inner iteration budget per stage.
    pub max_inner: usize,
    /// Outer stage budget; `None` uses the solver default.
    pub max_outer: Option<usize>,
    pub feasibility_margin: f64,
    /// Override the default registry solver.
    pub solver: Option<&'a dyn RiccatiSolver>,
}

impl Default for SolverConfig<'_> {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            seed: 0,
            max_inner: 500,
            max_outer: None,
            feasibility_margin: DEFAULT_FEASIBILITY_MARGIN,
            solver: None,
        }
    }
}

impl std::fmt::Debug for SolverConfig<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverConfig")
            .field("tol", &self.tol)
            .field("seed", &self.seed)
            .field("max_inner", &self.max_inner)
            .field("max_outer", &self.max_outer)
            .field("feasibility_margin", &self.feasibility_margin)
            .field("solver", &self.solver.map(|s| s.name()))
            .finish()
    }
}

/// One correction request. Only the operators the `(alpha, beta)` branch
/// actually needs must be present: `(+,+)` needs `A^{1/2}` only, `(−,−)`
/// needs `A^{-1/2}` only, and the mixed branches need both.
pub struct UpdateRequest<'a> {
    pub sqrt_op: Option<&'a dyn SymmetricOperator>,
    pub inv_sqrt_op: Option<&'a dyn SymmetricOperator>,
    /// Perturbation factor, n x k: the perturbation is `alpha·ZZᵀ`.
    pub z: DMatrix<f64>,
    pub alpha: Sign,
    pub beta: Sign,
    /// Requested correction width.
    pub rank: usize,
    pub solver_cfg: SolverConfig<'a>,
}

impl std::fmt::Debug for UpdateRequest<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UpdateRequest")
            .field("sqrt_op", &self.sqrt_op.map(|o| o.dim()))
            .field("inv_sqrt_op", &self.inv_sqrt_op.map(|o| o.dim()))
            .field("z_shape", &self.z.shape())
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("rank", &self.rank)
            .field("solver_cfg", &self.solver_cfg)
            .finish()
    }
}

/// Outcome of the downdate feasibility test.
#[derive(Debug, Clone, Copy)]
pub struct Feasibility {
    pub feasible: bool,
    /// Minimum eigenvalue of `I_k − ZᵀA^{-1}Z`.
    pub min_eig: f64,
}

/// A computed correction. `correction` carries sign `alpha·beta`, so
/// `A^{beta/2} + correction` (as operators) is the corrected root.
#[derive(Debug, Clone)]
pub struct CorrectionResult {
    pub correction: LowRankFactor,
    /// `‖R(C̃)‖_F` of the branch's target equation — equal to the backward
    /// error of the corrected root.
    pub residual_norm: f64,
    pub riccati_diag: RiccatiSolution,
}

/// Decides whether `A − ZZᵀ` stays positive definite, via the minimum
/// eigenvalue of `I_k − ZᵀA^{-1}Z`. `inv_apply` maps a block `X` to
/// `A^{-1}X`; only k columns pass through it.
pub fn check_downdate_feasible<F>(inv_apply: F, z: &DMatrix<f64>) -> Result<Feasibility>
where
    F: FnOnce(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let k = z.ncols();
    if k == 0 {
        return Ok(Feasibility {
            feasible: true,
            min_eig: 1.0,
        });
    }
    let w = inv_apply(z)?;
    if w.shape() != z.shape() {
        return Err(Error::DimensionMismatch(format!(
            "inv_apply returned {:?}, expected {:?}",
            w.shape(),
            z.shape()
        )));
    }
    let mut m = DMatrix::identity(k, k) - z.tr_mul(&w);
    let mt = m.transpose();
    m = (&m + mt) * 0.5;
    let (vals, _) = sym_eigen_sorted(&m);
    let min_eig = vals[0];
    Ok(Feasibility {
        feasible: min_eig > DEFAULT_FEASIBILITY_MARGIN,
        min_eig,
    })
}

/// `V` such that `(A + alpha·ZZᵀ)^{-1} = A^{-1} − alpha·VVᵀ`, built from
/// `A^{-1/2}` alone: `G̃ = A^{-1/2}Z`, then
/// `V = A^{-1/2}G̃ · (I + alpha·G̃ᵀG̃)^{-1/2}`.
pub fn build_v_for_inverse(
    inv_sqrt_op: &dyn SymmetricOperator,
    z: &DMatrix<f64>,
    alpha: Sign,
) -> Result<DMatrix<f64>> {
    build_v_with_margin(inv_sqrt_op, z, alpha, DEFAULT_FEASIBILITY_MARGIN)
}

fn build_v_with_margin(
    inv_sqrt_op: &dyn SymmetricOperator,
    z: &DMatrix<f64>,
    alpha: Sign,
    margin: f64,
) -> Result<DMatrix<f64>> {
    let n = inv_sqrt_op.dim();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} rows, operator dim is {n}",
            z.nrows()
        )));
    }
    let k = z.ncols();
    if k == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let g = inv_sqrt_op.apply(z)?;
    let mut m = DMatrix::identity(k, k);
    m += g.tr_mul(&g) * alpha.value();
    let mt = m.transpose();
    m = (&m + mt) * 0.5;
    if alpha == Sign::Minus {
        let (vals, _) = sym_eigen_sorted(&m);
        if vals[0] <= margin {
            return Err(Error::InfeasibleDowndate {
                min_eig: vals[0],
                margin,
            });
        }
    }
    let root_inv = dense_principal_root(&m, 2, true)?;
    Ok(inv_sqrt_op.apply(&g)? * root_inv)
}

/// Exact Woodbury conversion of a correction across the root/inverse-root
/// boundary: returns `U = (base·U₁)(I_r + U₁ᵀ·base·U₁)^{-1/2}` so that
///
/// ```text
/// (base^{-1} + U₁U₁ᵀ)^{-1} = base − UUᵀ
/// ```
///
/// `base` is the operator applied directly (its inverse is the matrix the
/// update was solved on), so no `apply_inverse` is needed. The width of
/// `U` equals the width of `U₁` — no growth, no truncation.
pub fn smw_convert(base_op: &dyn SymmetricOperator, u1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = base_op.dim();
    if u1.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows, operator dim is {n}",
            u1.nrows()
        )));
    }
    let r = u1.ncols();
    if r == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let p = base_op.apply(u1)?;
    let mut m = DMatrix::identity(r, r) + u1.tr_mul(&p);
    let mt = m.transpose();
    m = (&m + mt) * 0.5;
    let root_inv = dense_principal_root(&m, 2, true)?;
    Ok(p * root_inv)
}

/// One `(alpha, beta)` branch of the correction algorithm.
pub trait CorrectionStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    /// The `(alpha, beta)` pair this strategy serves.
    fn branch(&self) -> (Sign, Sign);
    fn run(&self, req: &UpdateRequest) -> Result<CorrectionResult>;
}

/// `(+,+)`: update of the square root.
pub struct SqrtUpdate;
/// `(−,−)`: downdate of the inverse square root.
pub struct InvSqrtDowndate;
/// `(−,+)`: downdate of the square root, via `(−,−)` plus conversion.
pub struct SqrtDowndate;
/// `(+,−)`: update of the inverse square root, via `(+,+)` plus conversion.
pub struct InvSqrtUpdate;

static STRATEGIES: [&dyn CorrectionStrategy; 4] =
    [&SqrtUpdate, &InvSqrtDowndate, &SqrtDowndate, &InvSqrtUpdate];

/// The strategy serving a given `(alpha, beta)` branch.
pub fn strategy_for(alpha: Sign, beta: Sign) -> &'static dyn CorrectionStrategy {
    *STRATEGIES
        .iter()
        .find(|s| s.branch() == (alpha, beta))
        .expect("all four branches are registered")
}

fn require_op<'r>(
    op: Option<&'r dyn SymmetricOperator>,
    which: &str,
    branch: &str,
) -> Result<&'r dyn SymmetricOperator> {
    op.ok_or_else(|| Error::InvalidArgument(format!("branch {branch} requires {which}")))
}

/// Shared inner solve: `E X + X E + X² = VVᵀ` at the request's settings.
fn riccati_update(
    e: &dyn SymmetricOperator,
    v: &DMatrix<f64>,
    req: &UpdateRequest,
) -> Result<RiccatiSolution> {
    let cfg = &req.solver_cfg;
    let mut prob = RiccatiProblem::new(e, v.transpose(), Sign::Plus, req.rank)?;
    prob.tol = cfg.tol;
    prob.seed = cfg.seed;
    prob.max_inner = cfg.max_inner;
    if let Some(mo) = cfg.max_outer {
        prob.max_outer = mo;
    }
    prob.validate()?;
    match cfg.solver {
        Some(s) => s.solve(&prob),
        None => riccati::solve(&prob),
    }
}

/// Package a solved factor: residual against the branch's target equation,
/// factor re-signed to `alpha·beta`.
fn finish(
    root_op: &dyn SymmetricOperator,
    u: DMatrix<f64>,
    v: &DMatrix<f64>,
    ab: Sign,
    diag: RiccatiSolution,
) -> Result<CorrectionResult> {
    let psd = LowRankFactor::new(u.clone(), Sign::Plus)?;
    let residual_norm = analysis::residual_norm_fro(root_op, &psd, v, ab)?;
    Ok(CorrectionResult {
        correction: LowRankFactor::new(u, ab)?,
        residual_norm,
        riccati_diag: diag,
    })
}

/// The `(+,+)` solve, reused by `(+,−)`.
fn solve_pp(req: &UpdateRequest, branch: &str) -> Result<RiccatiSolution> {
    let sqrt_op = require_op(req.sqrt_op, "sqrt_op", branch)?;
    riccati_update(sqrt_op, &req.z, req)
}

/// The `(−,−)` solve, reused by `(−,+)`. Returns the transformed
/// right-hand-side factor `V` alongside the solution.
fn solve_mm(req: &UpdateRequest, branch: &str) -> Result<(RiccatiSolution, DMatrix<f64>)> {
    let isq = require_op(req.inv_sqrt_op, "inv_sqrt_op", branch)?;
    let v = build_v_with_margin(isq, &req.z, Sign::Minus, req.solver_cfg.feasibility_margin)?;
    let sol = riccati_update(isq, &v, req)?;
    Ok((sol, v))
}

impl CorrectionStrategy for SqrtUpdate {
    fn name(&self) -> &'static str {
        "sqrt-update"
    }
    fn branch(&self) -> (Sign, Sign) {
        (Sign::Plus, Sign::Plus)
    }
    fn run(&self, req: &UpdateRequest) -> Result<CorrectionResult> {
        let sol = solve_pp(req, "(+1,+1)")?;
        let sqrt_op = require_op(req.sqrt_op, "sqrt_op", "(+1,+1)")?;
        finish(sqrt_op, sol.y.clone(), &req.z, Sign::Plus, sol)
    }
}

impl CorrectionStrategy for InvSqrtDowndate {
    fn name(&self) -> &'static str {
        "inv-sqrt-downdate"
    }
    fn branch(&self) -> (Sign, Sign) {
        (Sign::Minus, Sign::Minus)
    }
    fn run(&self, req: &UpdateRequest) -> Result<CorrectionResult> {
        let (sol, v) = solve_mm(req, "(-1,-1)")?;
        let isq = require_op(req.inv_sqrt_op, "inv_sqrt_op", "(-1,-1)")?;
        finish(isq, sol.y.clone(), &v, Sign::Plus, sol)
    }
}

impl CorrectionStrategy for SqrtDowndate {
    fn name(&self) -> &'static str {
        "sqrt-downdate"
    }
    fn branch(&self) -> (Sign, Sign) {
        (Sign::Minus, Sign::Plus)
    }
    fn run(&self, req: &UpdateRequest) -> Result<CorrectionResult> {
        let (sol, _) = solve_mm(req, "(-1,+1)")?;
        let sqrt_op = require_op(req.sqrt_op, "sqrt_op", "(-1,+1)")?;
        let u = smw_convert(sqrt_op, &sol.y)?;
        finish(sqrt_op, u, &req.z, Sign::Minus, sol)
    }
}

impl CorrectionStrategy for InvSqrtUpdate {
    fn name(&self) -> &'static str {
        "inv-sqrt-update"
    }
    fn branch(&self) -> (Sign, Sign) {
        (Sign::Plus, Sign::Minus)
    }
    fn run(&self, req: &UpdateRequest) -> Result<CorrectionResult> {
        let sol = solve_pp(req, "(+1,-1)")?;
        let isq = require_op(req.inv_sqrt_op, "inv_sqrt_op", "(+1,-1)")?;
        let u = smw_convert(isq, &sol.y)?;
        let v = build_v_with_margin(isq, &req.z, Sign::Plus, req.solver_cfg.feasibility_margin)?;
        finish(isq, u, &v, Sign::Minus, sol)
    }
}

/// Compute the correction for `req`'s branch.
///
/// A non-convergent inner solve is *not* an error: the best-effort factor
/// comes back with `riccati_diag.converged == false` and an honest
/// residual. Errors are reserved for infeasible downdates, missing
/// operators, and dimension problems.
pub fn update_correction(req: &UpdateRequest) -> Result<CorrectionResult> {
    let n = match (req.sqrt_op, req.inv_sqrt_op) {
        (Some(a), Some(b)) => {
            if a.dim() != b.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "sqrt_op dim {} != inv_sqrt_op dim {}",
                    a.dim(),
                    b.dim()
                )));
            }
            a.dim()
        }
        (Some(a), None) => a.dim(),
        (None, Some(b)) => b.dim(),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "at least one of sqrt_op / inv_sqrt_op must be provided".into(),
            ));
        }
    };
    if req.z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} rows, operator dim is {n}",
            req.z.nrows()
        )));
    }
    let ab = Sign::product(req.alpha, req.beta);
    if req.z.ncols() == 0 || req.z.amax() == 0.0 {
        return Ok(CorrectionResult {
            correction: LowRankFactor::empty(n, ab),
            residual_norm: 0.0,
            riccati_diag: riccati::trivial_solution(n),
        });
    }
    strategy_for(req.alpha, req.beta).run(req)
}

/// Split an indefinite perturbation `W diag(d) Wᵀ` (any real `d`) into a
/// PSD part `Z₊Z₊ᵀ` and an NSD part `−Z₋Z₋ᵀ` via the eigendecomposition
/// of the small Gram matrix `diag(d)^{1/2}ᵀ... ` — concretely of
/// `D^{1/2}(WᵀW)D^{1/2}` with signed square roots, so the two factors are
/// orthogonal-column combinations of the original columns.
pub fn split_indefinite(w: &DMatrix<f64>, d: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = w.ncols();
    if d.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {k} columns",
            d.len()
        )));
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite weight".into()));
    }
    let n = w.nrows();
    if k == 0 {
        return Ok((DMatrix::zeros(n, 0), DMatrix::zeros(n, 0)));
    }
    // Scale columns by sqrt(|d|), keep the sign in a small symmetric core:
    // W diag(d) Wᵀ = Ws S Wsᵀ with S = diag(sign d). Eigendecompose the
    // k x k congruence of S by the Gram root to split by sign exactly.
    let mut ws = w.clone();
    for (j, mut col) in ws.column_iter_mut().enumerate() {
        col *= d[j].abs().sqrt();
    }
    let gram = ws.tr_mul(&ws);
    let (gvals, gvecs) = sym_eigen_sorted(&gram);
    // Thin orthonormal basis Q for range(Ws): Ws = Q B.
    let tol = gvals[gvals.len() - 1].abs().max(1.0) * 1e-14;
    let mut keep = Vec::new();
    for i in 0..gvals.len() {
        if gvals[i] > tol {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Ok((DMatrix::zeros(n, 0), DMatrix::zeros(n, 0)));
    }
    let mut binv = DMatrix::zeros(k, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = gvals[i].sqrt();
        binv.set_column(c, &(gvecs.column(i) / s));
    }
    let q = &ws * &binv; // n x m, orthonormal columns
    // Core m x m: Qᵀ (Ws S Wsᵀ) Q.
    let mut ss = ws.clone();
    for (j, mut col) in ss.column_iter_mut().enumerate() {
        if d[j] < 0.0 {
            col *= -1.0;
        }
    }
    let core = (q.tr_mul(&ss)) * (ws.tr_mul(&q));
    let ct = core.transpose();
    let core = (core + ct) * 0.5;
    let (cvals, cvecs) = sym_eigen_sorted(&core);
    let mut plus_cols = Vec::new();
    let mut minus_cols = Vec::new();
    let scale = cvals.amax().max(1.0);
    for i in 0..cvals.len() {
        let lam = cvals[i];
        if lam > 1e-14 * scale {
            plus_cols.push(&q * (cvecs.column(i) * lam.sqrt()));
        } else if lam < -1e-14 * scale {
            minus_cols.push(&q * (cvecs.column(i) * (-lam).sqrt()));
        }
    }
    let pack = |cols: Vec<nalgebra::DVector<f64>>| {
        if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    };
    Ok((pack(plus_cols), pack(minus_cols)))
}
