//! Printable application demonstrations, each reporting its distance to a
//! dense oracle computed on the spot.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lrsqrt::apps::{gls, polar, sample, zca};
use lrsqrt::operators::{dense_principal_root, sym_eigen_sorted, DenseSymmetric, DiagonalOperator};
use lrsqrt::{Error, Sign};

use crate::families::gaussian_factor;
use crate::Result;

/// Whiten a spiked covariance `sigma² I + ZZᵀ` and compare the factored
/// whitener against the dense inverse square root.
pub fn zca_demo(p: usize, seed: u64) -> Result<String> {
    let k = 3.min(p);
    let rank = 12.min(p);
    let sigma2 = 1.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian_factor(&mut rng, p, k);
    let cov = zca::SpikedCovariance::new(sigma2, z)?;
    let u = zca::zca_fit(&cov, rank)?;
    let oracle = dense_principal_root(&cov.to_dense(), 2, true)?;
    let approx = DMatrix::identity(p, p) / cov.sigma() + u.to_dense();
    let rel = (&oracle - &approx).norm() / oracle.norm();

    let mut out = String::new();
    let _ = writeln!(out, "zca whitening: p={p}, spikes={k}, correction rank={rank}");
    let _ = writeln!(out, "  correction width used: {}", u.width());
    let _ = writeln!(out, "  relative whitener error vs dense inverse root: {rel:.3e}");
    Ok(out)
}

/// Generalized least squares under spiked heteroscedastic noise, against a
/// dense weighted normal-equations solve.
pub fn gls_demo(n: usize, seed: u64) -> Result<String> {
    let d = 5.min(n);
    let k = 2;
    let rank = 20.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_factor(&mut rng, n, d);
    let w_true = gaussian_factor(&mut rng, d, 1);
    let noise = DiagonalOperator::new(DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)))?;
    let z = gaussian_factor(&mut rng, n, k) * 0.6;
    let c = noise.to_dense() + &z * z.transpose();
    let c_root = dense_principal_root(&c, 2, false)?;
    let y = &x * &w_true + &c_root * gaussian_factor(&mut rng, n, 1);
    let y = DVector::from_column_slice(y.as_slice());

    let fit = gls::gls_solve(&x, &y, &noise, &z, Sign::Plus, rank)?;

    let chol = nalgebra::Cholesky::new(c).ok_or(Error::SingularOperator)?;
    let cinv_x = chol.solve(&x);
    let cinv_y = chol.solve(&y);
    let w_dense = (x.tr_mul(&cinv_x))
        .lu()
        .solve(&(x.tr_mul(&cinv_y)))
        .ok_or(Error::SingularOperator)?;
    let rel = (&fit.coefficients - &w_dense).norm() / w_dense.norm();

    let mut out = String::new();
    let _ = writeln!(out, "spiked-noise gls: n={n}, d={d}, spikes={k}, correction rank={rank}");
    let _ = writeln!(out, "  coefficient error vs dense gls: {rel:.3e}");
    let _ = writeln!(out, "  weighted normal-equations residual: {:.3e}", fit.normal_residual);
    let _ = writeln!(out, "  rank deficient design: {}", fit.rank_deficient);
    Ok(out)
}

/// Remove one row from a polar factorization and compare against a dense
/// refactorization of the shortened data matrix.
pub fn polar_demo(n: usize, seed: u64) -> Result<String> {
    let d = 5.min(n);
    let rank = 4.min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_factor(&mut rng, n, d);
    let state = polar::PolarState::from_data(&x)?;
    let removed = 0;
    let after = polar::polar_downdate(&state, removed, rank)?;

    let x_minus = x.clone().remove_row(removed);
    let mut gram = x_minus.tr_mul(&x_minus);
    let gt = gram.transpose();
    gram = (&gram + gt) * 0.5;
    let p_oracle = dense_principal_root(&gram, 2, false)?;
    let p_err = (after.p().matrix() - &p_oracle).norm() / p_oracle.norm();
    let u = after.u_factor();
    let ortho = (u.tr_mul(u) - DMatrix::identity(d, d)).norm();

    let mut out = String::new();
    let _ = writeln!(out, "polar row downdate: n={n}, d={d}, correction rank={rank}");
    let _ = writeln!(out, "  polar-factor error vs dense refactorization: {p_err:.3e}");
    let _ = writeln!(out, "  orthonormality drift of the updated factor: {ortho:.3e}");
    Ok(out)
}

/// Draw from `N(0, (Q₀ + ZZᵀ)^{-1})` through the corrected root and compare
/// the sample covariance spectrally against the dense inverse.
pub fn sample_demo(n: usize, seed: u64) -> Result<String> {
    let k = 2.min(n);
    let rank = 8.min(n);
    let count = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = DiagonalOperator::new(DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)))?;
    let z = gaussian_factor(&mut rng, n, k) * 0.5;
    let mu = DVector::zeros(n);
    let draws = sample::gaussian_sample(&mu, &q0.powf(-0.5), &z, rank, count, seed)?;

    let sample_cov = &draws * draws.transpose() / count as f64;
    let q_dense = q0.to_dense() + &z * z.transpose();
    let cov_oracle = DenseSymmetric::new(q_dense)?.inverse()?.matrix().clone_owned();
    let diff = &sample_cov - &cov_oracle;
    let (dvals, _) = sym_eigen_sorted(&(0.5 * (&diff + diff.transpose())));
    let (cvals, _) = sym_eigen_sorted(&cov_oracle);
    let spectral_rel = dvals.amax() / cvals.amax();

    let mut out = String::new();
    let _ = writeln!(out, "perturbed-precision sampling: n={n}, spikes={k}, rank={rank}, draws={count}");
    let _ = writeln!(out, "  spectral relative error of the sample covariance: {spectral_rel:.3e}");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zca_demo_reports_small_error() {
        let report = zca_demo(30, 7).unwrap();
        assert!(report.contains("relative whitener error"));
        let err = extract_value(&report, "relative whitener error vs dense inverse root:");
        assert!(err < 1e-4, "whitener error {err:.3e}");
    }

    #[test]
    fn gls_demo_matches_dense() {
        let report = gls_demo(60, 7).unwrap();
        let err = extract_value(&report, "coefficient error vs dense gls:");
        assert!(err < 1e-4, "coefficient error {err:.3e}");
    }

    #[test]
    fn polar_demo_matches_dense() {
        let report = polar_demo(30, 7).unwrap();
        let err = extract_value(&report, "polar-factor error vs dense refactorization:");
        assert!(err < 1e-3, "polar error {err:.3e}");
    }

    #[test]
    fn sample_demo_covariance_is_close() {
        let report = sample_demo(10, 7).unwrap();
        let err = extract_value(&report, "spectral relative error of the sample covariance:");
        assert!(err < 0.2, "covariance error {err:.3e}");
    }

    fn extract_value(report: &str, label: &str) -> f64 {
        let line = report
            .lines()
            .find(|l| l.contains(label))
            .unwrap_or_else(|| panic!("missing label {label:?} in {report}"));
        line.rsplit(' ').next().unwrap().parse().unwrap()
    }
}
