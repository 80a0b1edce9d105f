//! Implicit symmetric-positive-definite operators.
//!
//! Everything downstream (the Riccati solver, the update branches, the
//! applications) touches matrices only through [`SymmetricOperator`]:
//! an implicit symmetric map with a mandatory `apply` and an optional
//! `apply_inverse`. Concrete representations provided here:
//!
//! * [`DiagonalOperator`] — strictly positive diagonal,
//! * [`DiagonalPlusLowRank`] — D + Σⱼ sⱼUⱼUⱼᵀ with Sherman-Morrison-Woodbury
//!   inverse applies and width-capped compression,
//! * [`DenseSymmetric`] — dense matrix with cached eigendecomposition; the
//!   test oracle for principal p-th roots,
//! * [`LowRankPerturbed`] / [`InverseView`] / [`CountingOperator`] — adapters
//!   over a borrowed operator.
//!
//! Operators are immutable after construction and safe to apply from several
//! threads concurrently; "updates" (appending a correction, compression)
//! return new operators.

pub mod mm;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative band below the top eigenvalue magnitude inside which negative
/// eigenvalues are treated as floating-point zeros by the dense root oracle.
const PSD_CLAMP_REL: f64 = 1e-10;
/// Relative symmetry tolerance accepted by [`DenseSymmetric::new`].
const SYMMETRY_REL: f64 = 1e-14;

/// The sign of a rank-one contribution, `+1` or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    /// Sign of the product of two signed quantities.
    pub fn product(a: Sign, b: Sign) -> Sign {
        if a == b {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+1",
            Sign::Minus => "-1",
        })
    }
}

impl TryFrom<i64> for Sign {
    type Error = Error;

    fn try_from(v: i64) -> Result<Sign> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(Error::InvalidArgument(format!(
                "sign must be +1 or -1, got {other}"
            ))),
        }
    }
}

/// An implicit symmetric linear map on R^n.
///
/// `apply` acts column-wise on a thin block. Implementations must be linear
/// and symmetric (`<Ax, y> = <x, Ay>`); when `has_inverse` is true,
/// `apply_inverse` composed with `apply` must be the identity to roughly
/// 1e-10 relative. Both return `Err` rather than panicking when an internal
/// factorization turns out singular.
pub trait SymmetricOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// Apply the operator to every column of `m` (an n x w block).
    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Apply the inverse to every column of `m`.
    fn apply_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let _ = m;
        Err(Error::MissingInverse)
    }

    fn has_inverse(&self) -> bool {
        false
    }

    /// Abstract per-column cost of one `apply`, in flops; used only for
    /// diagnostics against the solver cost contract, never for control flow.
    fn cost_hint(&self) -> f64;

    fn apply_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        Ok(DVector::from_column_slice(self.apply(&m)?.as_slice()))
    }

    fn apply_inverse_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        Ok(DVector::from_column_slice(
            self.apply_inverse(&m)?.as_slice(),
        ))
    }
}

fn check_apply_dims(op_dim: usize, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != op_dim {
        return Err(Error::DimensionMismatch(format!(
            "operator dim {} applied to block with {} rows",
            op_dim,
            m.nrows()
        )));
    }
    Ok(())
}

/// Horizontal concatenation; blocks must share a row count.
pub(crate) fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let nrows = blocks.first().map_or(0, |b| b.nrows());
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(nrows, total);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), nrows, "hcat: inconsistent row counts");
        out.view_mut((0, at), (nrows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending. The
/// input is symmetrized first; pass matrices that are symmetric up to
/// rounding.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = 0.5 * (m + m.transpose());
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

// ---------------------------------------------------------------------------
// DiagonalOperator
// ---------------------------------------------------------------------------

/// A strictly positive diagonal matrix.
#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    entries: DVector<f64>,
}

impl DiagonalOperator {
    pub fn new(entries: DVector<f64>) -> Result<Self> {
        if entries.iter().any(|&d| !d.is_finite() || d <= 0.0) {
            return Err(Error::InvalidArgument(
                "diagonal entries must be finite and strictly positive".into(),
            ));
        }
        Ok(DiagonalOperator { entries })
    }

    pub fn scaled_identity(n: usize, c: f64) -> Result<Self> {
        DiagonalOperator::new(DVector::from_element(n, c))
    }

    pub fn entries(&self) -> &DVector<f64> {
        &self.entries
    }

    /// Entrywise power (valid for any exponent since entries are positive);
    /// `powf(0.5)` is the square root, `powf(-0.5)` the inverse square root.
    pub fn powf(&self, p: f64) -> DiagonalOperator {
        DiagonalOperator {
            entries: self.entries.map(|d| d.powf(p)),
        }
    }

    pub fn lambda_min(&self) -> f64 {
        self.entries.min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.entries.max()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.entries)
    }
}

impl SymmetricOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.entries.len()
    }

    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        let mut out = m.clone_owned();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.entries[i];
        }
        Ok(out)
    }

    fn apply_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        let mut out = m.clone_owned();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row /= self.entries[i];
        }
        Ok(out)
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn cost_hint(&self) -> f64 {
        self.dim() as f64
    }
}

// ---------------------------------------------------------------------------
// LowRankFactor
// ---------------------------------------------------------------------------

/// A thin factor `F` (n x r) with a sign, representing `sign * F Fᵀ`.
///
/// This is the universal correction format: PSD when the sign is `+1`,
/// negative semidefinite when `-1`.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    cols: DMatrix<f64>,
    sign: Sign,
}

impl LowRankFactor {
    pub fn new(cols: DMatrix<f64>, sign: Sign) -> Result<Self> {
        if cols.ncols() > cols.nrows() {
            return Err(Error::InvalidArgument(format!(
                "low-rank factor wider ({}) than tall ({})",
                cols.ncols(),
                cols.nrows()
            )));
        }
        if cols.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "low-rank factor contains non-finite entries".into(),
            ));
        }
        Ok(LowRankFactor { cols, sign })
    }

    pub fn empty(n: usize, sign: Sign) -> Self {
        LowRankFactor {
            cols: DMatrix::zeros(n, 0),
            sign,
        }
    }

    pub fn cols(&self) -> &DMatrix<f64> {
        &self.cols
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn width(&self) -> usize {
        self.cols.ncols()
    }

    pub fn dim(&self) -> usize {
        self.cols.nrows()
    }

    /// `sign * F (Fᵀ m)` — two thin products, never an n x n intermediate.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.width() == 0 {
            return DMatrix::zeros(self.dim(), m.ncols());
        }
        let inner = self.cols.tr_mul(m);
        let mut out = &self.cols * inner;
        out *= self.sign.value();
        out
    }

    /// Dense `sign * F Fᵀ`; test-scale oracle use only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = &self.cols * self.cols.transpose();
        out *= self.sign.value();
        out
    }
}

// ---------------------------------------------------------------------------
// DenseSymmetric
// ---------------------------------------------------------------------------

/// Dense symmetric matrix with a lazily cached spectral decomposition.
///
/// Serves as the dense oracle in tests (principal p-th roots by eigenvalue
/// roots) and as the operator representation for file-loaded matrices.
pub struct DenseSymmetric {
    m: DMatrix<f64>,
    eig: OnceLock<(DVector<f64>, DMatrix<f64>)>,
}

impl std::fmt::Debug for DenseSymmetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseSymmetric")
            .field("dim", &self.m.nrows())
            .finish()
    }
}

impl Clone for DenseSymmetric {
    fn clone(&self) -> Self {
        DenseSymmetric {
            m: self.m.clone(),
            eig: OnceLock::new(),
        }
    }
}

impl DenseSymmetric {
    /// Accepts a matrix symmetric to 1e-14 relative (max-entry scale) and
    /// stores its exactly symmetrized form.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "dense symmetric operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax();
        let skew = (&m - m.transpose()).amax();
        if scale > 0.0 && skew > SYMMETRY_REL * scale {
            return Err(Error::InvalidArgument(format!(
                "matrix is not symmetric: |M - Mᵀ| = {skew:.3e} at scale {scale:.3e}"
            )));
        }
        let sym = 0.5 * (&m + m.transpose());
        Ok(DenseSymmetric {
            m: sym,
            eig: OnceLock::new(),
        })
    }

    /// Materialize any operator densely by applying it to the identity.
    /// Test-scale oracle plumbing.
    pub fn from_operator(op: &dyn SymmetricOperator) -> Result<Self> {
        let n = op.dim();
        let dense = op.apply(&DMatrix::identity(n, n))?;
        let sym = 0.5 * (&dense + dense.transpose());
        DenseSymmetric::new(sym)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    fn eigen(&self) -> &(DVector<f64>, DMatrix<f64>) {
        self.eig.get_or_init(|| sym_eigen_sorted(&self.m))
    }

    /// Eigenvalues sorted ascending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigen().0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.m.nrows() == 0 {
            return 0.0;
        }
        self.eigen().0[0]
    }

    /// Principal p-th root `M^(±1/p)` for p in {2, 4}.
    ///
    /// Negative eigenvalues within `1e-10 * |lambda|_max` of zero are clamped
    /// to zero; anything lower fails with `NotPsd`. The inverse root demands
    /// strict positive definiteness after clamping.
    pub fn principal_root(&self, p: u32, inverse: bool) -> Result<DenseSymmetric> {
        if p != 2 && p != 4 {
            return Err(Error::InvalidArgument(format!(
                "principal root order must be 2 or 4, got {p}"
            )));
        }
        let (values, vectors) = self.eigen();
        let scale = values.amax();
        let band = PSD_CLAMP_REL * scale;
        let mut roots = DVector::zeros(values.len());
        for i in 0..values.len() {
            let lam = values[i];
            let clamped = if lam < 0.0 {
                if lam < -band {
                    return Err(Error::NotPsd { min_eig: lam });
                }
                0.0
            } else {
                lam
            };
            if inverse && clamped == 0.0 {
                return Err(Error::NotPd { min_eig: lam });
            }
            let root = match p {
                2 => clamped.sqrt(),
                _ => clamped.sqrt().sqrt(),
            };
            roots[i] = if inverse { 1.0 / root } else { root };
        }
        Ok(rebuild_from_eigen(vectors, &roots))
    }

    /// Dense inverse via the cached eigendecomposition.
    pub fn inverse(&self) -> Result<DenseSymmetric> {
        let (values, vectors) = self.eigen();
        let scale = values.amax();
        for &lam in values.iter() {
            if lam.abs() <= 1e-14 * scale {
                return Err(Error::SingularOperator);
            }
        }
        let inv = values.map(|l| 1.0 / l);
        Ok(rebuild_from_eigen(vectors, &inv))
    }
}

fn rebuild_from_eigen(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DenseSymmetric {
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    let m = &scaled * vectors.transpose();
    DenseSymmetric {
        m: 0.5 * (&m + m.transpose()),
        eig: OnceLock::new(),
    }
}

impl SymmetricOperator for DenseSymmetric {
    fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        Ok(&self.m * m)
    }

    fn apply_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        let (values, vectors) = self.eigen();
        let scale = values.amax();
        for &lam in values.iter() {
            if lam.abs() <= 1e-14 * scale {
                return Err(Error::SingularOperator);
            }
        }
        let mut inner = vectors.tr_mul(m);
        for (i, mut row) in inner.row_iter_mut().enumerate() {
            row /= values[i];
        }
        Ok(vectors * inner)
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn cost_hint(&self) -> f64 {
        let n = self.dim() as f64;
        n * n
    }
}

/// Free-standing dense principal root oracle: `m^(±1/p)` for p in {2, 4}.
pub fn dense_principal_root(m: &DMatrix<f64>, p: u32, inverse: bool) -> Result<DMatrix<f64>> {
    Ok(DenseSymmetric::new(m.clone())?
        .principal_root(p, inverse)?
        .matrix()
        .clone())
}

// ---------------------------------------------------------------------------
// Aggregated Sherman-Morrison-Woodbury machinery
// ---------------------------------------------------------------------------

/// Cached pieces of `(B + W S Wᵀ)^{-1} = B^{-1} - B^{-1}W (S^{-1} + Wᵀ B^{-1} W)^{-1} Wᵀ B^{-1}`
/// for signed `S` (so `S^{-1} = S`).
struct SmwState {
    w: DMatrix<f64>,
    binv_w: DMatrix<f64>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

fn build_smw(w: DMatrix<f64>, signs: &[f64], binv_w: DMatrix<f64>) -> SmwState {
    let mut k = w.tr_mul(&binv_w);
    for (i, &s) in signs.iter().enumerate() {
        k[(i, i)] += s;
    }
    let lu = k.lu();
    let lu = if lu.is_invertible() { Some(lu) } else { None };
    SmwState { w, binv_w, lu }
}

impl SmwState {
    /// Finish the SMW apply given `B^{-1} x`.
    fn correct(&self, binv_x: DMatrix<f64>) -> Result<DMatrix<f64>> {
        let lu = self.lu.as_ref().ok_or(Error::SingularOperator)?;
        let rhs = self.w.tr_mul(&binv_x);
        let small = lu.solve(&rhs).ok_or(Error::SingularOperator)?;
        Ok(binv_x - &self.binv_w * small)
    }
}

/// Flatten a term list into one signed aggregate `(W, signs per column)`.
fn aggregate_terms(n: usize, terms: &[LowRankFactor]) -> (DMatrix<f64>, Vec<f64>) {
    let total: usize = terms.iter().map(|t| t.width()).sum();
    let mut w = DMatrix::zeros(n, total);
    let mut signs = Vec::with_capacity(total);
    let mut at = 0;
    for t in terms {
        w.view_mut((0, at), (n, t.width())).copy_from(t.cols());
        signs.extend(std::iter::repeat(t.sign().value()).take(t.width()));
        at += t.width();
    }
    (w, signs)
}

/// Solve `(base + sign * F Fᵀ) y = x` with one base inverse apply per column
/// plus an r x r dense solve.
pub fn smw_apply_inverse(
    base: &DiagonalOperator,
    f: &LowRankFactor,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if f.dim() != base.dim() || x.len() != base.dim() {
        return Err(Error::DimensionMismatch(format!(
            "smw_apply_inverse: base dim {}, factor dim {}, rhs len {}",
            base.dim(),
            f.dim(),
            x.len()
        )));
    }
    let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let binv_x = base.apply_inverse(&xm)?;
    if f.width() == 0 {
        return Ok(DVector::from_column_slice(binv_x.as_slice()));
    }
    let binv_w = base.apply_inverse(f.cols())?;
    let signs = vec![f.sign().value(); f.width()];
    let smw = build_smw(f.cols().clone(), &signs, binv_w);
    let out = smw.correct(binv_x)?;
    Ok(DVector::from_column_slice(out.as_slice()))
}

// ---------------------------------------------------------------------------
// DiagonalPlusLowRank
// ---------------------------------------------------------------------------

/// `D + Σⱼ sⱼ Uⱼ Uⱼᵀ`: a positive diagonal plus an ordered list of signed
/// thin corrections.
///
/// Terms are kept verbatim (exactness preserved between compressions) and
/// aggregated into a single signed eigen-factorization only when the total
/// width exceeds `compression_cap`. Inverse applies go through the
/// aggregated Sherman-Morrison-Woodbury identity, factored lazily once.
pub struct DiagonalPlusLowRank {
    base: DiagonalOperator,
    terms: Vec<LowRankFactor>,
    compression_cap: usize,
    smw: OnceLock<SmwState>,
}

impl std::fmt::Debug for DiagonalPlusLowRank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiagonalPlusLowRank")
            .field("dim", &self.base.dim())
            .field("total_width", &self.total_width())
            .field("compression_cap", &self.compression_cap)
            .finish()
    }
}

impl Clone for DiagonalPlusLowRank {
    fn clone(&self) -> Self {
        DiagonalPlusLowRank {
            base: self.base.clone(),
            terms: self.terms.clone(),
            compression_cap: self.compression_cap,
            smw: OnceLock::new(),
        }
    }
}

impl DiagonalPlusLowRank {
    pub fn new(base: DiagonalOperator, compression_cap: usize) -> Result<Self> {
        if compression_cap == 0 {
            return Err(Error::InvalidArgument(
                "compression cap must be at least 1".into(),
            ));
        }
        Ok(DiagonalPlusLowRank {
            base,
            terms: Vec::new(),
            compression_cap,
            smw: OnceLock::new(),
        })
    }

    /// Build with initial terms; compresses immediately if they exceed the cap.
    pub fn with_terms(
        base: DiagonalOperator,
        terms: Vec<LowRankFactor>,
        compression_cap: usize,
    ) -> Result<(Self, f64)> {
        let mut op = DiagonalPlusLowRank::new(base, compression_cap)?;
        for t in &terms {
            if t.dim() != op.base.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "term dim {} vs base dim {}",
                    t.dim(),
                    op.base.dim()
                )));
            }
        }
        op.terms = terms;
        if op.total_width() > compression_cap {
            let (compressed, discarded) = op.compress(compression_cap)?;
            Ok((compressed, discarded))
        } else {
            Ok((op, 0.0))
        }
    }

    pub fn base(&self) -> &DiagonalOperator {
        &self.base
    }

    pub fn terms(&self) -> &[LowRankFactor] {
        &self.terms
    }

    pub fn total_width(&self) -> usize {
        self.terms.iter().map(|t| t.width()).sum()
    }

    pub fn compression_cap(&self) -> usize {
        self.compression_cap
    }

    /// Append one signed term, compressing if the cap is exceeded. Returns
    /// the new operator and the discarded eigenvalue mass (0 when no
    /// compression ran).
    pub fn append_term(&self, term: LowRankFactor) -> Result<(Self, f64)> {
        if term.dim() != self.base.dim() {
            return Err(Error::DimensionMismatch(format!(
                "term dim {} vs base dim {}",
                term.dim(),
                self.base.dim()
            )));
        }
        let mut terms = self.terms.clone();
        terms.push(term);
        DiagonalPlusLowRank::with_terms(self.base.clone(), terms, self.compression_cap)
    }

    /// Replace the aggregated signed factor by its best rank-<=cap symmetric
    /// approximation (truncated eigendecomposition of the small Gram
    /// structure). Returns the new operator and the discarded eigenvalue
    /// mass `Σ|λ_dropped|`.
    pub fn compress(&self, cap: usize) -> Result<(Self, f64)> {
        if cap == 0 {
            return Err(Error::InvalidArgument(
                "compression cap must be at least 1".into(),
            ));
        }
        let n = self.base.dim();
        let (w, signs) = aggregate_terms(n, &self.terms);
        if w.ncols() <= cap {
            let mut out = self.clone();
            out.compression_cap = cap;
            return Ok((out, 0.0));
        }
        // W S Wᵀ = Q (R S Rᵀ) Qᵀ with W = QR thin; eigendecompose the small core.
        let qr = w.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let mut core = &r * DMatrix::from_diagonal(&DVector::from_vec(signs.clone()));
        core *= r.transpose();
        let (values, vectors) = sym_eigen_sorted(&core);
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));

        let mut plus_cols = Vec::new();
        let mut minus_cols = Vec::new();
        let mut discarded = 0.0;
        for (pos, &i) in order.iter().enumerate() {
            let lam = values[i];
            if pos < cap && lam != 0.0 {
                let col = (&q * vectors.column(i)) * lam.abs().sqrt();
                if lam > 0.0 {
                    plus_cols.push(col);
                } else {
                    minus_cols.push(col);
                }
            } else {
                discarded += lam.abs();
            }
        }
        let mut terms = Vec::new();
        if !plus_cols.is_empty() {
            terms.push(LowRankFactor::new(
                DMatrix::from_columns(&plus_cols),
                Sign::Plus,
            )?);
        }
        if !minus_cols.is_empty() {
            terms.push(LowRankFactor::new(
                DMatrix::from_columns(&minus_cols),
                Sign::Minus,
            )?);
        }
        Ok((
            DiagonalPlusLowRank {
                base: self.base.clone(),
                terms,
                compression_cap: cap,
                smw: OnceLock::new(),
            },
            discarded,
        ))
    }

    /// Dense materialization; test-scale oracle use only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = self.base.to_dense();
        for t in &self.terms {
            out += t.to_dense();
        }
        out
    }

    fn smw(&self) -> &SmwState {
        self.smw.get_or_init(|| {
            let n = self.base.dim();
            let (w, signs) = aggregate_terms(n, &self.terms);
            let binv_w = self
                .base
                .apply_inverse(&w)
                .expect("diagonal inverse is total");
            build_smw(w, &signs, binv_w)
        })
    }
}

impl SymmetricOperator for DiagonalPlusLowRank {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        let mut out = self.base.apply(m)?;
        for t in &self.terms {
            out += t.apply(m);
        }
        Ok(out)
    }

    fn apply_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        let binv_m = self.base.apply_inverse(m)?;
        if self.terms.is_empty() {
            return Ok(binv_m);
        }
        self.smw().correct(binv_m)
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn cost_hint(&self) -> f64 {
        (self.dim() + 2 * self.dim() * self.total_width()) as f64
    }
}

// ---------------------------------------------------------------------------
// LowRankPerturbed — borrowed base plus signed corrections
// ---------------------------------------------------------------------------

/// `B + Σⱼ sⱼ Uⱼ Uⱼᵀ` over a borrowed base operator.
///
/// The generalization of [`DiagonalPlusLowRank`] used when the base is not
/// diagonal (an already-corrected operator, a dense matrix). Inverse applies
/// need `base.has_inverse()`; the SMW factorization is built eagerly at
/// construction in that case.
pub struct LowRankPerturbed<'a> {
    base: &'a dyn SymmetricOperator,
    terms: Vec<LowRankFactor>,
    smw: Option<SmwState>,
}

impl<'a> LowRankPerturbed<'a> {
    pub fn new(base: &'a dyn SymmetricOperator, terms: Vec<LowRankFactor>) -> Result<Self> {
        for t in &terms {
            if t.dim() != base.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "term dim {} vs base dim {}",
                    t.dim(),
                    base.dim()
                )));
            }
        }
        let smw = if base.has_inverse() && !terms.is_empty() {
            let (w, signs) = aggregate_terms(base.dim(), &terms);
            let binv_w = base.apply_inverse(&w)?;
            Some(build_smw(w, &signs, binv_w))
        } else {
            None
        };
        Ok(LowRankPerturbed { base, terms, smw })
    }
}

impl SymmetricOperator for LowRankPerturbed<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        let mut out = self.base.apply(m)?;
        for t in &self.terms {
            out += t.apply(m);
        }
        Ok(out)
    }

    fn apply_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_apply_dims(self.dim(), m)?;
        let binv_m = self.base.apply_inverse(m)?;
        match &self.smw {
            None => Ok(binv_m),
            Some(smw) => smw.correct(binv_m),
        }
    }

    fn has_inverse(&self) -> bool {
        self.base.has_inverse()
    }

    fn cost_hint(&self) -> f64 {
        self.base.cost_hint()
            + (2 * self.dim() * self.terms.iter().map(|t| t.width()).sum::<usize>()) as f64
    }
}

// ---------------------------------------------------------------------------
// InverseView
// ---------------------------------------------------------------------------

/// The inverse of a borrowed operator: `apply` and `apply_inverse` swapped.
///
/// Lets an implicit `A^{-1/2}` stand in as `A^{1/2}` (and vice versa) without
/// materializing anything.
pub struct InverseView<'a> {
    inner: &'a dyn SymmetricOperator,
}

impl<'a> InverseView<'a> {
    pub fn new(inner: &'a dyn SymmetricOperator) -> Result<Self> {
        if !inner.has_inverse() {
            return Err(Error::MissingInverse);
        }
        Ok(InverseView { inner })
    }
}

impl SymmetricOperator for InverseView<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inner.apply_inverse(m)
    }

    fn apply_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inner.apply(m)
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn cost_hint(&self) -> f64 {
        // Same order as the forward map for every representation here.
        self.inner.cost_hint()
    }
}

// ---------------------------------------------------------------------------
// CountingOperator
// ---------------------------------------------------------------------------

/// Wraps an operator and counts applied columns, for asserting cost
/// contracts at desk scale. The counters are interior; the represented
/// operator stays immutable and thread-safe.
pub struct CountingOperator<'a> {
    inner: &'a dyn SymmetricOperator,
    applies: AtomicU64,
    inverse_applies: AtomicU64,
}

impl<'a> CountingOperator<'a> {
    pub fn new(inner: &'a dyn SymmetricOperator) -> Self {
        CountingOperator {
            inner,
            applies: AtomicU64::new(0),
            inverse_applies: AtomicU64::new(0),
        }
    }

    /// (forward columns, inverse columns) applied so far.
    pub fn counts(&self) -> (u64, u64) {
        (
            self.applies.load(Ordering::Relaxed),
            self.inverse_applies.load(Ordering::Relaxed),
        )
    }
}

impl SymmetricOperator for CountingOperator<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.applies.fetch_add(m.ncols() as u64, Ordering::Relaxed);
        self.inner.apply(m)
    }

    fn apply_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inverse_applies
            .fetch_add(m.ncols() as u64, Ordering::Relaxed);
        self.inner.apply_inverse(m)
    }

    fn has_inverse(&self) -> bool {
        self.inner.has_inverse()
    }

    fn cost_hint(&self) -> f64 {
        self.inner.cost_hint()
    }
}
