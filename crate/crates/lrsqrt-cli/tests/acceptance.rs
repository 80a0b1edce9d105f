//! End-to-end acceptance checks: ten numbered criteria, each printing one
//! `acceptance NN <name>: PASS/FAIL` line and enforcing its tolerance and
//! runtime budget. Lines are written straight to the stdout handle so they
//! show up even under the default test capture.

use std::panic::AssertUnwindSafe;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lrsqrt::analysis::{error_report, residual_norm_fro, LambdaMinSource};
use lrsqrt::apps::{gls, polar, sample, zca};
use lrsqrt::operators::{
    dense_principal_root, sym_eigen_sorted, DenseSymmetric, DiagonalOperator, LowRankFactor,
};
use lrsqrt::riccati::{self, RiccatiProblem};
use lrsqrt::sqrtupdate::{update_correction, SolverConfig, UpdateRequest};
use lrsqrt::{Error, Sign};
use lrsqrt_cli::{run_decay, run_synthetic, run_tracking, ExperimentSpec, Family, TrackingSpec};

fn announce(line: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn criterion<F>(num: u32, name: &str, limit_s: f64, body: F)
where
    F: FnOnce() -> Result<(), String>,
{
    let t0 = Instant::now();
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(body));
    let elapsed = t0.elapsed().as_secs_f64();
    let (pass, detail) = match &outcome {
        Ok(Ok(())) if elapsed <= limit_s => (true, String::new()),
        Ok(Ok(())) => (
            false,
            format!("runtime {elapsed:.1}s exceeded the {limit_s:.0}s budget"),
        ),
        Ok(Err(msg)) => (false, msg.clone()),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .map(|s| s.as_str())
                .or_else(|| p.downcast_ref::<&str>().copied())
                .unwrap_or("no message");
            (false, format!("panicked: {msg}"))
        }
    };
    announce(&format!(
        "acceptance {num:02} {name}: {} ({elapsed:.1}s)",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "acceptance {num:02} {name} failed: {detail}");
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[test]
fn criterion_01_riccati_oracle() {
    criterion(1, "riccati-oracle", 30.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        // Full-rank solves against the closed-form dense solution.
        for trial in 0..20 {
            let n = 20 + (trial % 5) * 10;
            let k = 1 + trial % 3;
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.3..3.0));
            let e = DiagonalOperator::new(d.clone()).map_err(s)?;
            let g = randn(&mut rng, k, n);
            let mut prob = RiccatiProblem::new(&e, g.clone(), Sign::Plus, n).map_err(s)?;
            prob.tol = 1e-10;
            let sol = riccati::solve(&prob).map_err(s)?;
            let x = &sol.y * sol.y.transpose();
            let oracle =
                riccati::dense_oracle(&DMatrix::from_diagonal(&d), &g.tr_mul(&g), Sign::Plus)
                    .map_err(s)?;
            let rel = (&x - &oracle).norm() / oracle.norm();
            if rel > 1e-6 {
                return Err(format!(
                    "trial {trial}: full-rank X misses the oracle by {rel:.3e}"
                ));
            }
        }
        // Rank-limited solves on rank-1 right-hand sides.
        for trial in 0..20 {
            let n = 40 + (trial % 3) * 10;
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.3..3.0));
            let e = DiagonalOperator::new(d).map_err(s)?;
            let g = randn(&mut rng, 1, n);
            let rhs_norm = g.tr_mul(&g).norm();
            let prob = RiccatiProblem::new(&e, g, Sign::Plus, 12).map_err(s)?;
            let sol = riccati::solve(&prob).map_err(s)?;
            let rel = riccati::residual_norm(&prob, &sol.y).map_err(s)? / rhs_norm;
            if rel > 1e-6 {
                return Err(format!("trial {trial}: rank-12 relative residual {rel:.3e}"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_02_gradient_check() {
    criterion(2, "gradient-check", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for trial in 0..20 {
            let n = 8 + trial % 12;
            let k = 1 + trial % 3;
            let r = 2 + trial % 4;
            let alpha = if trial % 2 == 0 { Sign::Plus } else { Sign::Minus };
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.5));
            let e = DiagonalOperator::new(d).map_err(s)?;
            let g = randn(&mut rng, k, n);
            let prob = RiccatiProblem::new(&e, g, alpha, r).map_err(s)?;
            let y = randn(&mut rng, n, r) * 0.7;
            let grad = riccati::gradient(&prob, &y).map_err(s)?;
            let mut v = randn(&mut rng, n, r);
            v /= v.norm();
            let analytic = grad.dot(&v);
            let h = 1e-5 * y.norm().max(1.0);
            let fp = riccati::objective(&prob, &(&y + &v * h)).map_err(s)?;
            let fm = riccati::objective(&prob, &(&y - &v * h)).map_err(s)?;
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-12);
            if rel > 1e-6 {
                return Err(format!(
                    "trial {trial}: directional derivative {analytic:.6e} vs finite difference {fd:.6e} (rel {rel:.3e})"
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_03_decay_soundness() {
    criterion(3, "decay-bound-soundness", 20.0, || {
        for family in [Family::UniformDiag, Family::LogspaceDiag] {
            for beta in [Sign::Plus, Sign::Minus] {
                let spec = ExperimentSpec {
                    family,
                    beta,
                    seed: 3,
                    verify: true, // full (j, l) sweep, not just the emitted head row
                    ..ExperimentSpec::default()
                };
                let rows =
                    run_decay(&spec).map_err(|e| format!("{family:?} beta {beta:?}: {e}"))?;
                if rows.len() != 100 {
                    return Err(format!(
                        "{family:?} beta {beta:?}: expected 100 rows, got {}",
                        rows.len()
                    ));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_04_residual_identity() {
    criterion(4, "residual-identity", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for trial in 0..50 {
            let n = 20 + trial % 15;
            let k = 1 + trial % 3;
            let w = 1 + trial % 6;
            let ab = if trial % 2 == 0 { Sign::Plus } else { Sign::Minus };
            let root = DVector::from_fn(n, |_, _| rng.random_range(0.4..2.0)).map(f64::sqrt);
            let s_op = DiagonalOperator::new(root.clone()).map_err(s)?;
            let u = randn(&mut rng, n, w) * 0.4;
            let ct = LowRankFactor::new(u.clone(), Sign::Plus).map_err(s)?;
            let v = randn(&mut rng, n, k);
            let thin = residual_norm_fro(&s_op, &ct, &v, ab).map_err(s)?;
            // Dense check: backward error of the corrected root W = S + ab·C̃
            // against the perturbed power S² + ab·VVᵀ.
            let s_mat = DMatrix::from_diagonal(&root);
            let ctd = &u * u.transpose();
            let w_mat = &s_mat + &ctd * ab.value();
            let power = &s_mat * &s_mat + (&v * v.transpose()) * ab.value();
            let dense = (&w_mat * &w_mat - &power).norm();
            let rel = (thin - dense).abs() / dense;
            if rel > 1e-12 {
                return Err(format!(
                    "trial {trial}: thin residual {thin:.6e} vs dense backward error {dense:.6e} (rel {rel:.3e})"
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_05_forward_bound_soundness() {
    criterion(5, "forward-bound-soundness", 20.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let mut checked = 0;
        let mut trial = 0;
        while checked < 50 {
            trial += 1;
            if trial > 200 {
                return Err("could not collect 50 feasible instances".into());
            }
            let n = 30 + trial % 11;
            let k = 1 + trial % 2;
            let alpha = if trial % 3 == 0 { Sign::Minus } else { Sign::Plus };
            let beta = if trial % 2 == 0 { Sign::Plus } else { Sign::Minus };
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.5..3.0));
            let diag = DiagonalOperator::new(d.clone()).map_err(s)?;
            let mut z = randn(&mut rng, n, k);
            if alpha == Sign::Minus {
                z *= 0.1;
            }
            let sqrt_op = diag.powf(0.5);
            let inv_op = diag.powf(-0.5);
            // Coarse solves: the certificates must hold regardless of quality.
            let mut cfg = SolverConfig::default();
            cfg.tol = 1e-4;
            let req = UpdateRequest {
                sqrt_op: Some(&sqrt_op),
                inv_sqrt_op: Some(&inv_op),
                z: z.clone(),
                alpha,
                beta,
                rank: 1 + trial % 4,
                solver_cfg: cfg,
            };
            let res = match update_correction(&req) {
                Ok(r) => r,
                Err(Error::InfeasibleDowndate { .. }) => continue,
                Err(e) => return Err(s(e)),
            };
            checked += 1;
            let a_dense = DMatrix::from_diagonal(&d);
            let mut b = a_dense.clone();
            b += (&z * z.transpose()) * alpha.value();
            let inverse = beta == Sign::Minus;
            let target = dense_principal_root(&b, 2, inverse).map_err(s)?;
            let base_root = dense_principal_root(&a_dense, 2, inverse).map_err(s)?;
            let approx = &base_root + res.correction.to_dense();
            let (bvals, _) = sym_eigen_sorted(&b);
            let lam_min = match beta {
                Sign::Plus => bvals[0],
                Sign::Minus => 1.0 / bvals[bvals.len() - 1],
            };
            let rep = error_report(res.residual_norm, n, lam_min, LambdaMinSource::DenseOracle)
                .map_err(s)?;
            let diff = &target - &approx;
            let fwd_fro = diff.norm();
            let fwd_two = diff.singular_values().amax();
            if fwd_fro > rep.forward_fro_bound * (1.0 + 1e-10) + 1e-14 {
                return Err(format!(
                    "trial {trial}: Frobenius error {fwd_fro:.3e} exceeds bound {:.3e}",
                    rep.forward_fro_bound
                ));
            }
            if fwd_two > rep.forward_two_bound * (1.0 + 1e-10) + 1e-14 {
                return Err(format!(
                    "trial {trial}: spectral error {fwd_two:.3e} exceeds bound {:.3e}",
                    rep.forward_two_bound
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_06_error_vs_rank_grid() {
    criterion(6, "error-vs-rank-grid", 300.0, || {
        for alpha in [Sign::Plus, Sign::Minus] {
            for beta in [Sign::Plus, Sign::Minus] {
                let spec = ExperimentSpec {
                    alpha,
                    beta,
                    seed: 6,
                    verify: true,
                    ..ExperimentSpec::default()
                };
                let rows =
                    run_synthetic(&spec).map_err(|e| format!("({alpha:?},{beta:?}): {e}"))?;
                let mut best = f64::INFINITY;
                for row in &rows {
                    if !row.feasible {
                        return Err(format!(
                            "({alpha:?},{beta:?}) rank {}: infeasible cell",
                            row.rank
                        ));
                    }
                    if row.rel_error > (2.0 * best).max(1e-8) {
                        return Err(format!(
                            "({alpha:?},{beta:?}) rank {}: error {:.3e} above twice the running best {best:.3e}",
                            row.rank, row.rel_error
                        ));
                    }
                    best = best.min(row.rel_error);
                    let floor = row.optimal_truncation.max(1e-8);
                    if row.rel_error > 100.0 * floor {
                        return Err(format!(
                            "({alpha:?},{beta:?}) rank {}: error {:.3e} exceeds 100x the optimal truncation {:.3e}",
                            row.rank, row.rel_error, row.optimal_truncation
                        ));
                    }
                }
                let last = rows.last().unwrap();
                if last.rel_error > 1e-6 {
                    return Err(format!(
                        "({alpha:?},{beta:?}): error {:.3e} at rank {} above 1e-6",
                        last.rel_error, last.rank
                    ));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_07_mixed_branch_positivity() {
    criterion(7, "mixed-branch-positivity", 60.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        for &(alpha, beta) in &[(Sign::Minus, Sign::Plus), (Sign::Plus, Sign::Minus)] {
            for trial in 0..50 {
                let n = 30 + trial % 11;
                let k = 1 + trial % 2;
                let d = DVector::from_fn(n, |_, _| rng.random_range(0.4..2.5));
                let diag = DiagonalOperator::new(d.clone()).map_err(s)?;
                let mut z = randn(&mut rng, n, k);
                if alpha == Sign::Minus {
                    // Rescale into guaranteed-feasible territory: ZᵀA⁻¹Z ≼ I/2.
                    let w = DMatrix::from_fn(n, k, |i, j| z[(i, j)] / d[i]);
                    let (qv, _) = sym_eigen_sorted(&z.tr_mul(&w));
                    z *= (0.5 / qv[qv.len() - 1]).sqrt();
                }
                let sqrt_op = diag.powf(0.5);
                let inv_op = diag.powf(-0.5);
                let req = UpdateRequest {
                    sqrt_op: Some(&sqrt_op),
                    inv_sqrt_op: Some(&inv_op),
                    z: z.clone(),
                    alpha,
                    beta,
                    rank: 2 + trial % 5,
                    solver_cfg: SolverConfig::default(),
                };
                let res = update_correction(&req)
                    .map_err(|e| format!("({alpha:?},{beta:?}) trial {trial}: {e}"))?;
                let inverse = beta == Sign::Minus;
                let base_root = dense_principal_root(&DMatrix::from_diagonal(&d), 2, inverse)
                    .map_err(s)?;
                let corrected = &base_root + res.correction.to_dense();
                let (vals, _) = sym_eigen_sorted(&corrected);
                if vals[0] <= 0.0 {
                    return Err(format!(
                        "({alpha:?},{beta:?}) trial {trial}: corrected root has min eigenvalue {:.3e}",
                        vals[0]
                    ));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_08_round_trip() {
    criterion(8, "update-downdate-round-trip", 60.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        for trial in 0..20 {
            let n = 30 + trial % 11;
            let k = 1 + trial % 2;
            let rank = 8 + trial % 4;
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
            let diag = DiagonalOperator::new(d.clone()).map_err(s)?;
            let z = randn(&mut rng, n, k) * 0.5;
            let sqrt_op = diag.powf(0.5);
            let inv_op = diag.powf(-0.5);
            let req1 = UpdateRequest {
                sqrt_op: Some(&sqrt_op),
                inv_sqrt_op: Some(&inv_op),
                z: z.clone(),
                alpha: Sign::Plus,
                beta: Sign::Plus,
                rank,
                solver_cfg: SolverConfig::default(),
            };
            let res1 = update_correction(&req1).map_err(s)?;
            let a_root = DMatrix::from_diagonal(&d.map(f64::sqrt));
            let w1 = &a_root + res1.correction.to_dense();
            // Remove the same Z again, now from the updated root.
            let w1_op = DenseSymmetric::new(w1.clone()).map_err(s)?;
            let w1_inv = w1_op.inverse().map_err(s)?;
            let req2 = UpdateRequest {
                sqrt_op: Some(&w1_op),
                inv_sqrt_op: Some(&w1_inv),
                z: z.clone(),
                alpha: Sign::Minus,
                beta: Sign::Plus,
                rank,
                solver_cfg: SolverConfig::default(),
            };
            let res2 = update_correction(&req2).map_err(s)?;
            let w2 = &w1 + res2.correction.to_dense();
            let err = (&w2 - &a_root).norm();

            let mut b = DMatrix::from_diagonal(&d);
            b += &z * z.transpose();
            let (bvals, _) = sym_eigen_sorted(&b);
            let rep1 = error_report(res1.residual_norm, n, bvals[0], LambdaMinSource::DenseOracle)
                .map_err(s)?;
            let mut back = &w1 * &w1;
            back -= &z * z.transpose();
            let (backvals, _) = sym_eigen_sorted(&back);
            let rep2 =
                error_report(res2.residual_norm, n, backvals[0], LambdaMinSource::DenseOracle)
                    .map_err(s)?;
            let budget = 5.0 * (rep1.forward_fro_bound + rep2.forward_fro_bound);
            if err > budget {
                return Err(format!(
                    "trial {trial}: round-trip error {err:.3e} exceeds budget {budget:.3e}"
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_09_tracking_stability() {
    criterion(9, "tracking-stability", 300.0, || {
        let spec = TrackingSpec {
            presets: vec![1e-8],
            verify: true,
            ..TrackingSpec::default()
        };
        let rows = run_tracking(&spec).map_err(s)?;
        if rows.len() != 40 {
            return Err(format!("expected 40 checkpoints, got {}", rows.len()));
        }
        if let Some(r) = rows.iter().find(|r| !r.accepted) {
            return Err(format!("step {} was rejected", r.t));
        }
        let mut window: Vec<f64> = rows
            .iter()
            .filter(|r| r.t >= 5)
            .map(|r| r.rel_error_inv_fourth)
            .collect();
        window.sort_by(f64::total_cmp);
        let median = window[window.len() / 2];
        let max = *window.last().unwrap();
        if max > 3.0 * median.max(1e-12) {
            return Err(format!(
                "max/median {:.2} exceeds 3 (max {max:.3e}, median {median:.3e})",
                max / median
            ));
        }
        Ok(())
    });
}

#[test]
fn criterion_10_application_oracles() {
    criterion(10, "application-oracles", 180.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(1010);

        // Whitening: spiked covariance, p = 100, three spikes.
        let p = 100;
        let z = randn(&mut rng, p, 3);
        let cov = zca::SpikedCovariance::new(1.5, z).map_err(s)?;
        let u = zca::zca_fit(&cov, 12).map_err(s)?;
        let oracle = dense_principal_root(&cov.to_dense(), 2, true).map_err(s)?;
        let approx = DMatrix::identity(p, p) / cov.sigma() + u.to_dense();
        let rel = (&oracle - &approx).norm() / oracle.norm();
        if rel > 1e-5 {
            return Err(format!("zca whitener error {rel:.3e} above 1e-5"));
        }

        // Polar row downdate vs a dense SVD refactorization.
        let (n, dcols) = (50, 5);
        let x = randn(&mut rng, n, dcols);
        let state = polar::PolarState::from_data(&x).map_err(s)?;
        let after = polar::polar_downdate(&state, 0, 4).map_err(s)?;
        let xm = x.clone().remove_row(0);
        let svd = xm.svd(true, true);
        let vt = svd.v_t.as_ref().expect("thin SVD has V^T");
        let mut p_oracle = DMatrix::zeros(dcols, dcols);
        for i in 0..dcols {
            p_oracle += vt.row(i).transpose() * vt.row(i) * svd.singular_values[i];
        }
        let p_err = (after.p().matrix() - &p_oracle).norm() / p_oracle.norm();
        if p_err > 1e-4 {
            return Err(format!("polar downdate error {p_err:.3e} above 1e-4"));
        }

        // Generalized least squares vs a dense weighted solve.
        let (gn, gd, gk) = (200, 5, 2);
        let xg = randn(&mut rng, gn, gd);
        let w_true = randn(&mut rng, gd, 1);
        let noise =
            DiagonalOperator::new(DVector::from_fn(gn, |_, _| rng.random_range(0.5..2.0)))
                .map_err(s)?;
        let zg = randn(&mut rng, gn, gk) * 0.6;
        let c = noise.to_dense() + &zg * zg.transpose();
        let c_root = dense_principal_root(&c, 2, false).map_err(s)?;
        let y_mat = &xg * &w_true + &c_root * randn(&mut rng, gn, 1);
        let y = DVector::from_column_slice(y_mat.as_slice());
        let fit = gls::gls_solve(&xg, &y, &noise, &zg, Sign::Plus, 20).map_err(s)?;
        let chol = nalgebra::Cholesky::new(c).ok_or("noise covariance not PD")?;
        let w_dense = (xg.tr_mul(&chol.solve(&xg)))
            .lu()
            .solve(&xg.tr_mul(&chol.solve(&y)))
            .ok_or("normal equations singular")?;
        let gls_err = (&fit.coefficients - &w_dense).norm() / w_dense.norm();
        if gls_err > 1e-5 {
            return Err(format!("gls coefficient error {gls_err:.3e} above 1e-5"));
        }

        // Sampler: covariance of 50000 draws against the dense inverse.
        let sn = 20;
        let q0 =
            DiagonalOperator::new(DVector::from_fn(sn, |_, _| rng.random_range(0.5..2.0)))
                .map_err(s)?;
        let zs = randn(&mut rng, sn, 2) * 0.5;
        let mu = DVector::zeros(sn);
        let count = 50_000;
        let draws =
            sample::gaussian_sample(&mu, &q0.powf(-0.5), &zs, 8, count, 999).map_err(s)?;
        let sample_cov = &draws * draws.transpose() / count as f64;
        let q_dense = q0.to_dense() + &zs * zs.transpose();
        let cov_oracle = DenseSymmetric::new(q_dense)
            .map_err(s)?
            .inverse()
            .map_err(s)?
            .matrix()
            .clone_owned();
        let diff = &sample_cov - &cov_oracle;
        let (dvals, _) = sym_eigen_sorted(&diff);
        let (cvals, _) = sym_eigen_sorted(&cov_oracle);
        let spectral = dvals.amax() / cvals.amax();
        if spectral > 0.05 {
            return Err(format!("sample covariance spectral error {spectral:.3e} above 0.05"));
        }
        Ok(())
    });
}
