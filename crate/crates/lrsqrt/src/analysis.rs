//! Residuals, error certificates, and singular-value decay bounds.
//!
//! Three independent diagnostics for a computed correction `C̃ = UUᵀ` to
//! `A^{beta/2}`:
//!
//! * [`residual_norm_fro`] — the target-equation residual
//!   `R(C̃) = VVᵀ − A^{beta/2}C̃ − C̃A^{beta/2} − alpha·beta·C̃²`, evaluated
//!   with thin algebra only,
//! * [`error_report`] — backward and forward error bounds certified from a
//!   residual (the forward bounds need `lambda_min((A+alpha ZZᵀ)^beta)`,
//!   which callers supply together with its provenance),
//! * [`decay_bound_factor`] / [`exact_delta_spectrum`] — an a-priori
//!   geometric decay rate for the singular values of the exact correction
//!   `Delta = (A+D)^{beta/2} − A^{beta/2}`, and a dense reference spectrum
//!   to hold it against.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operators::{hcat, sym_eigen_sorted, DenseSymmetric, LowRankFactor, Sign, SymmetricOperator};

/// `||R(C̃)||_F` for `C̃ = U Uᵀ` against the target equation of the
/// `(alpha, beta)` branch with root operator `A^{beta/2}`:
///
/// ```text
/// R(C̃) = VVᵀ − A^{beta/2} C̃ − C̃ A^{beta/2} − alpha·beta · C̃²
/// ```
///
/// Evaluated through a thin QR of `[V | A^{beta/2}U | U]`, so nothing n x n
/// is formed and the result is accurate to machine rounding rather than the
/// sqrt(epsilon) floor a Gram-matrix evaluation would have.
pub fn residual_norm_fro(
    sqrt_op_beta: &dyn SymmetricOperator,
    ctilde: &LowRankFactor,
    v: &DMatrix<f64>,
    alpha_beta: Sign,
) -> Result<f64> {
    if ctilde.sign() != Sign::Plus {
        return Err(Error::InvalidArgument(
            "residual takes the PSD factor of the correction (sign +1); the branch sign enters as alpha_beta".into(),
        ));
    }
    let n = sqrt_op_beta.dim();
    if ctilde.dim() != n || v.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "operator dim {n}, correction dim {}, V rows {}",
            ctilde.dim(),
            v.nrows()
        )));
    }
    let u = ctilde.cols();
    let w = u.ncols();
    let k = v.ncols();
    if w == 0 {
        return Ok(v.tr_mul(v).norm());
    }
    let au = sqrt_op_beta.apply(u)?;
    let t = hcat(&[v, &au, u]);
    let mut m = DMatrix::zeros(k + 2 * w, k + 2 * w);
    for i in 0..k {
        m[(i, i)] = 1.0;
    }
    for i in 0..w {
        m[(k + i, k + w + i)] = -1.0;
        m[(k + w + i, k + i)] = -1.0;
    }
    m.view_mut((k + w, k + w), (w, w))
        .copy_from(&(u.tr_mul(u) * (-alpha_beta.value())));
    let r = t.qr().r();
    Ok(((&r * m) * r.transpose()).norm())
}

/// Where the `lambda_min` fed to [`error_report`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMinSource {
    /// Caller-estimated (e.g. exact for diagonal operators).
    UserSupplied,
    /// Computed from a dense eigendecomposition at test scale.
    DenseOracle,
}

/// Certified error bounds derived from a residual norm.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub residual_fro: f64,
    /// Equal to `residual_fro`: the backward error in the squared equation
    /// is exactly the residual.
    pub backward_fro: f64,
    /// `(sqrt(n) · residual)^{1/2}`.
    pub forward_fro_bound: f64,
    /// `min(residual / sqrt(lambda_min), forward_fro_bound)`.
    pub forward_two_bound: f64,
    /// `lambda_min((A+alpha ZZᵀ)^beta)` as provided by the caller.
    pub lambda_min_used: f64,
    pub lambda_min_source: LambdaMinSource,
}

/// Turn a residual into backward/forward bounds. `lambda_min` is the
/// smallest eigenvalue of the perturbed power `(A+alpha ZZᵀ)^beta` — for
/// beta = -1 that is `1/lambda_max(A+alpha ZZᵀ)` — and must be positive.
pub fn error_report(
    residual_fro: f64,
    n: usize,
    lambda_min: f64,
    source: LambdaMinSource,
) -> Result<ErrorReport> {
    if !(residual_fro >= 0.0) || !residual_fro.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "residual must be finite and nonnegative, got {residual_fro}"
        )));
    }
    if !(lambda_min > 0.0) || !lambda_min.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda_min must be positive and finite, got {lambda_min}"
        )));
    }
    let forward_fro_bound = ((n as f64).sqrt() * residual_fro).sqrt();
    let forward_two_bound = (residual_fro / lambda_min.sqrt()).min(forward_fro_bound);
    Ok(ErrorReport {
        residual_fro,
        backward_fro: residual_fro,
        forward_fro_bound,
        forward_two_bound,
        lambda_min_used: lambda_min,
        lambda_min_source: source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// Correction to `A^{1/2}`.
    Sqrt,
    /// Correction to `A^{-1/2}`.
    InvSqrt,
}

/// Spectral inputs for the decay bound. All quantities are caller-supplied
/// (exact for diagonal operators, dense-oracle at test scale): the bound is
/// an a-priori statement about the instance, not something estimated from
/// solver iterates.
#[derive(Debug, Clone)]
pub struct DecayBoundParams {
    pub mode: DecayMode,
    /// `||A||₂` (equals `lambda_max_a` for SPD `A`).
    pub norm_a: f64,
    /// `||D||₂` of the perturbation `D = alpha ZZᵀ`.
    pub norm_d: f64,
    pub lambda_min_a: f64,
    pub lambda_max_a: f64,
    /// `lambda_min(A + D)`; only read in inverse mode.
    pub lambda_min_b: f64,
    /// Rank of the perturbation; singular-value indices step by `k`.
    pub k: usize,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

impl DecayBoundParams {
    /// Parameters for the square-root mode; `lambda_min_b` is not used by
    /// this mode and is stored equal to `lambda_min_a`.
    pub fn sqrt(norm_a: f64, norm_d: f64, lambda_min_a: f64, k: usize) -> Result<Self> {
        check_positive("norm_a", norm_a)?;
        check_positive("norm_d", norm_d)?;
        check_positive("lambda_min_a", lambda_min_a)?;
        if k == 0 {
            return Err(Error::InvalidArgument("perturbation rank k must be >= 1".into()));
        }
        Ok(DecayBoundParams {
            mode: DecayMode::Sqrt,
            norm_a,
            norm_d,
            lambda_min_a,
            lambda_max_a: norm_a,
            lambda_min_b: lambda_min_a,
            k,
        })
    }

    /// Parameters for the inverse-square-root mode.
    pub fn inv_sqrt(
        lambda_min_a: f64,
        lambda_max_a: f64,
        norm_d: f64,
        lambda_min_b: f64,
        k: usize,
    ) -> Result<Self> {
        check_positive("lambda_min_a", lambda_min_a)?;
        check_positive("lambda_max_a", lambda_max_a)?;
        check_positive("norm_d", norm_d)?;
        check_positive("lambda_min_b", lambda_min_b)?;
        if k == 0 {
            return Err(Error::InvalidArgument("perturbation rank k must be >= 1".into()));
        }
        Ok(DecayBoundParams {
            mode: DecayMode::InvSqrt,
            norm_a: lambda_max_a,
            norm_d,
            lambda_min_a,
            lambda_max_a,
            lambda_min_b,
            k,
        })
    }

    /// The effective condition-like quantity the decay rate depends on.
    pub fn kappa_hat(&self) -> f64 {
        match self.mode {
            DecayMode::Sqrt => {
                let root_min = self.lambda_min_a.sqrt();
                2.0 * ((self.norm_a + self.norm_d).sqrt() + root_min / 2.0) / root_min
            }
            DecayMode::InvSqrt => {
                // Same shape with the spectrum inverted: the large end is
                // lambda_min(A)^{-1} inflated by the downdate margin, the
                // small end lambda_max(A)^{-1}.
                let big = (1.0 / self.lambda_min_a) * (1.0 + self.norm_d / self.lambda_min_b);
                let small_root = (1.0 / self.lambda_max_a).sqrt();
                2.0 * (big.sqrt() + small_root / 2.0) / small_root
            }
        }
    }
}

/// Multiplicative decay factor: `sigma_{j + k·l}(Delta) <= factor(l) ·
/// sigma_j(Delta)` with `factor(l) = 4 · exp(−pi² l / ln(4 kappa_hat))`.
///
/// `factor(0) = 4` is reported raw — bounds above 1 are vacuous but honest.
/// Fails when `ln(4 kappa_hat)` is nonpositive (`kappa_hat <= 1/4`).
pub fn decay_bound_factor(params: &DecayBoundParams, l: usize) -> Result<f64> {
    let kappa = params.kappa_hat();
    if !(kappa > 0.25) || !kappa.is_finite() {
        return Err(Error::DecayDomain(kappa));
    }
    let log_term = (4.0 * kappa).ln();
    Ok(4.0 * (-(std::f64::consts::PI.powi(2)) * l as f64 / log_term).exp())
}

/// Singular values (descending) of the exact correction
/// `Delta = (A + alpha ZZᵀ)^{beta/2} − A^{beta/2}`, via the Sylvester
/// identity `A^{beta/2} Delta + Delta B^{beta/2} = B^beta − A^beta`
/// evaluated entrywise in the joint eigenbases.
///
/// Subtracting two dense roots directly would floor the tail near
/// `1e-10 · sigma_1`; this route keeps small singular values meaningful.
pub fn exact_delta_spectrum(
    a: &DenseSymmetric,
    z: &DMatrix<f64>,
    alpha: Sign,
    beta: Sign,
) -> Result<Vec<f64>> {
    let n = a.dim();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} rows, operator dim is {n}",
            z.nrows()
        )));
    }
    let (avals, avecs) = {
        let (v, w) = sym_eigen_sorted(a.matrix());
        (v, w)
    };
    if n > 0 && avals[0] <= 0.0 {
        return Err(Error::NotPd { min_eig: avals[0] });
    }
    let mut b = a.matrix().clone();
    b += (z * z.transpose()) * alpha.value();
    let (bvals, bvecs) = sym_eigen_sorted(&b);
    if n > 0 && bvals[0] <= 0.0 {
        return Err(Error::InfeasibleDowndate {
            min_eig: bvals[0],
            margin: 0.0,
        });
    }
    let uaz = avecs.tr_mul(z);
    let wz = bvecs.tr_mul(z);
    let mut delta_rot = match beta {
        Sign::Plus => {
            let mut num = &uaz * wz.transpose();
            num *= alpha.value();
            for i in 0..n {
                for j in 0..n {
                    num[(i, j)] /= avals[i].sqrt() + bvals[j].sqrt();
                }
            }
            num
        }
        Sign::Minus => {
            let mut left = uaz.clone();
            for (i, mut row) in left.row_iter_mut().enumerate() {
                row /= avals[i];
            }
            let mut right = wz.clone();
            for (j, mut row) in right.row_iter_mut().enumerate() {
                row /= bvals[j];
            }
            let mut num = &left * right.transpose();
            num *= -alpha.value();
            for i in 0..n {
                for j in 0..n {
                    num[(i, j)] /= 1.0 / avals[i].sqrt() + 1.0 / bvals[j].sqrt();
                }
            }
            num
        }
    };
    // Orthogonal rotations preserve singular values; take them directly.
    let mut sv: Vec<f64> = std::mem::take(&mut delta_rot)
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// `sqrt(sum_{i >= r} sigma_i²)` — the Frobenius error of the best rank-r
/// truncation, given the descending singular values.
pub fn spectrum_tail_norm(singular_values: &[f64], r: usize) -> f64 {
    singular_values
        .iter()
        .skip(r)
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
}
