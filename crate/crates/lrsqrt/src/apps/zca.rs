//! ZCA whitening under the spiked covariance model.
//!
//! For `Sigma = sigma² I_p + ZZᵀ` the whitening transform `Sigma^{-1/2}`
//! is `sigma^{-1} I` plus a rank-k NSD correction, so fitting reduces to
//! one `(+,−)` correction solve on `A = sigma² I` and applying the
//! whitener to an n x p data block costs `O(npr)` instead of `O(np²)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operators::{DiagonalOperator, LowRankFactor, Sign};
use crate::sqrtupdate::{update_correction, SolverConfig, UpdateRequest};

/// `Sigma = sigma2 · I_p + ZZᵀ` — always SPD.
#[derive(Debug, Clone)]
pub struct SpikedCovariance {
    sigma2: f64,
    z: DMatrix<f64>,
}

impl SpikedCovariance {
    pub fn new(sigma2: f64, z: DMatrix<f64>) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be positive and finite, got {sigma2}"
            )));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("spike factor has non-finite entries".into()));
        }
        Ok(SpikedCovariance { sigma2, z })
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `sigma`, the base standard deviation.
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn spike(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::identity(p, p) * self.sigma2 + &self.z * self.z.transpose()
    }
}

/// Fit the whitening correction: returns `U` (sign −1) with
/// `Sigma^{-1/2} ≈ sigma^{-1} I − UUᵀ`.
///
/// A non-convergent inner solve is promoted to an error here — a whitener
/// of unknown quality is not useful.
pub fn zca_fit(cov: &SpikedCovariance, rank: usize) -> Result<LowRankFactor> {
    let p = cov.dim();
    let s = cov.sigma();
    let sqrt_op = DiagonalOperator::scaled_identity(p, s)?;
    let inv_sqrt_op = DiagonalOperator::scaled_identity(p, 1.0 / s)?;
    let req = UpdateRequest {
        sqrt_op: Some(&sqrt_op),
        inv_sqrt_op: Some(&inv_sqrt_op),
        z: cov.z.clone(),
        alpha: Sign::Plus,
        beta: Sign::Minus,
        rank,
        solver_cfg: SolverConfig::default(),
    };
    let res = update_correction(&req)?;
    if !res.riccati_diag.converged {
        return Err(Error::NoConvergence(format!(
            "whitening correction stalled at relative residual {:.3e}",
            res.riccati_diag.residual_history.last().copied().unwrap_or(f64::NAN)
        )));
    }
    Ok(res.correction)
}

/// Apply `sigma^{-1} I + (signed UUᵀ)` to each row of `data` (n x p, one
/// sample per row) with two thin products — `O(n p r)` work.
pub fn zca_apply(sigma: f64, u: &LowRankFactor, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    if data.ncols() != u.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns, whitener dim is {}",
            data.ncols(),
            u.dim()
        )));
    }
    let mut out = data / sigma;
    if u.width() > 0 {
        let f = u.cols();
        out += (data * f) * (f.transpose() * u.sign().value());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{dense_principal_root, sym_eigen_sorted};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    const DENSE_ORACLE_TOL: f64 = 1e-5;
    const APPLY_MATCH_TOL: f64 = 1e-10;

    fn randn_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rand_distr::StandardNormal.sample(rng))
    }

    #[test]
    fn zero_spike_gives_scaled_identity_whitener() {
        let cov = SpikedCovariance::new(4.0, DMatrix::zeros(10, 0)).unwrap();
        let u = zca_fit(&cov, 3).unwrap();
        assert_eq!(u.width(), 0);
        let data = DMatrix::from_element(5, 10, 1.0);
        let out = zca_apply(cov.sigma(), &u, &data).unwrap();
        assert_eq!(out, data / 2.0);
    }

    #[test]
    fn unit_rank_one_spike_is_closed_form() {
        // Sigma = I + e1 e1ᵀ: Sigma^{-1/2} = I − (1 − 1/sqrt 2) e1 e1ᵀ.
        let p = 30;
        let mut e1 = DMatrix::zeros(p, 1);
        e1[(0, 0)] = 1.0;
        let cov = SpikedCovariance::new(1.0, e1).unwrap();
        let u = zca_fit(&cov, 1).unwrap();
        assert_eq!(u.sign(), Sign::Minus);
        let mut expect = DMatrix::zeros(p, p);
        expect[(0, 0)] = -(1.0 - 1.0 / 2.0_f64.sqrt());
        assert!((u.to_dense() - expect).norm() < 1e-8);
    }

    #[test]
    fn random_spike_matches_dense_inverse_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let p = 100;
        let z = randn_matrix(&mut rng, p, 3) * 0.5;
        let cov = SpikedCovariance::new(1.5, z).unwrap();
        let u = zca_fit(&cov, 12).unwrap();
        let whitener = DMatrix::identity(p, p) / cov.sigma() + u.to_dense();
        let oracle = dense_principal_root(&cov.to_dense(), 2, true).unwrap();
        let rel = (&whitener - &oracle).norm() / oracle.norm();
        assert!(rel <= DENSE_ORACLE_TOL, "rel {rel:.3e}");
    }

    #[test]
    fn apply_matches_dense_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let p = 40;
        let z = randn_matrix(&mut rng, p, 2) * 0.7;
        let cov = SpikedCovariance::new(0.8, z).unwrap();
        let u = zca_fit(&cov, 8).unwrap();
        let data = randn_matrix(&mut rng, 9, p);
        let thin = zca_apply(cov.sigma(), &u, &data).unwrap();
        let w_dense = DMatrix::identity(p, p) / cov.sigma() + u.to_dense();
        let dense = &data * &w_dense; // W symmetric
        assert!((thin - dense).norm() < APPLY_MATCH_TOL);
    }

    #[test]
    fn whitened_samples_have_near_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let p = 20;
        let k = 2;
        let z = randn_matrix(&mut rng, p, k);
        let cov = SpikedCovariance::new(1.0, z.clone()).unwrap();
        let u = zca_fit(&cov, p).unwrap();
        let m = 20_000;
        // Draw x = sigma·g0 + Z g1 so E[xxᵀ] = Sigma exactly.
        let g0 = randn_matrix(&mut rng, m, p) * cov.sigma();
        let g1 = randn_matrix(&mut rng, m, k);
        let data = g0 + g1 * z.transpose();
        let white = zca_apply(cov.sigma(), &u, &data).unwrap();
        let sample_cov = white.tr_mul(&white) / m as f64;
        let dev = &sample_cov - DMatrix::identity(p, p);
        let (vals, _) = sym_eigen_sorted(&dev);
        let spectral = vals.amax();
        assert!(spectral < 0.1, "spectral deviation {spectral:.3}");
    }
}
