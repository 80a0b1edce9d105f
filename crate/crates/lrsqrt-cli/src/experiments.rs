//! The three CSV experiments: error-vs-rank grids, singular-value decay
//! against the a-priori bound, and inverse-fourth-root tracking against a
//! dense per-step oracle.
//!
//! Plots are produced externally; the contract is the file. Every schema is
//! versioned in a leading comment line, and re-running with the same seed
//! yields byte-identical output.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lrsqrt::analysis::{
    decay_bound_factor, error_report, exact_delta_spectrum, spectrum_tail_norm,
    DecayBoundParams, LambdaMinSource,
};
use lrsqrt::apps::shampoo::ShampooTracker;
use lrsqrt::operators::{
    dense_principal_root, sym_eigen_sorted, DenseSymmetric, LowRankFactor,
};
use lrsqrt::sqrtupdate::{update_correction, SolverConfig, UpdateRequest};
use lrsqrt::{Error, Sign};

use crate::families::{gaussian_factor, prepare_base, Family, PreparedBase};
use crate::{CliError, Result};

/// Dense-oracle ceiling for the synthetic and decay grids.
const MAX_GRID_DIM: usize = 2000;
/// Dense-oracle ceiling for the tracking run (one eigendecomposition per
/// step, so the limit is tighter).
const MAX_TRACKING_DIM: usize = 500;
/// sigma1-scaled slack in the decay soundness assertions; the computed tail
/// of the exact spectrum carries absolute noise at this scale.
const DECAY_SLACK: f64 = 1e-12;
/// `--verify`: recomputed relative errors must agree with emitted values to
/// this absolute tolerance.
const VERIFY_MATCH_TOL: f64 = 1e-12;
/// `--verify`: emitted residuals must match the dense backward error to
/// this fraction of the perturbed power's norm.
const VERIFY_RESIDUAL_TOL: f64 = 1e-8;

/// Shared setup for the synthetic and decay grids. The perturbation is a
/// single seeded Gaussian column; `downdate_scale` shrinks it for
/// `alpha = -1` so downdates stay feasible by construction.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub family: Family,
    /// Matrix Market input, consulted only for `family = file`.
    pub matrix_path: Option<PathBuf>,
    /// Dimension for the synthetic families; `file` reads it from the matrix.
    pub n: usize,
    pub alpha: Sign,
    pub beta: Sign,
    pub rank_sweep: Vec<usize>,
    pub downdate_scale: f64,
    pub seed: u64,
    /// Inner Riccati relative-residual target.
    pub tol: f64,
    pub output_path: Option<PathBuf>,
    /// Re-derive every emitted number through an independent dense path.
    pub verify: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            family: Family::UniformDiag,
            matrix_path: None,
            n: 100,
            alpha: Sign::Plus,
            beta: Sign::Plus,
            rank_sweep: (1..=20).collect(),
            downdate_scale: 0.01,
            seed: 0,
            tol: 1e-8,
            output_path: None,
            verify: false,
        }
    }
}

impl ExperimentSpec {
    /// Checks shared by both grids. `n` is the realized dimension, which
    /// for `family = file` comes from the matrix itself.
    fn validate_common(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()).into());
        }
        if n > MAX_GRID_DIM {
            return Err(Error::DenseGuard(n, MAX_GRID_DIM).into());
        }
        if !(self.downdate_scale >= 0.0) || !self.downdate_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "downdate scale must be finite and nonnegative, got {}",
                self.downdate_scale
            ))
            .into());
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive and finite, got {}",
                self.tol
            ))
            .into());
        }
        Ok(())
    }

    fn validate_ranks(&self, n: usize) -> Result<()> {
        if self.rank_sweep.is_empty() {
            return Err(Error::InvalidArgument("rank sweep must be nonempty".into()).into());
        }
        if self.rank_sweep[0] == 0 {
            return Err(Error::InvalidArgument("ranks start at 1".into()).into());
        }
        if self.rank_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(
                Error::InvalidArgument("rank sweep must be strictly increasing".into()).into(),
            );
        }
        let max = *self.rank_sweep.last().unwrap();
        if max > n {
            return Err(Error::InvalidArgument(format!(
                "largest rank {max} exceeds dimension {n}"
            ))
            .into());
        }
        Ok(())
    }
}

/// One grid cell of the error-vs-rank experiment. All error columns are
/// relative to `||(A + alpha ZZᵀ)^{beta/2}||_F` except `residual`, which is
/// the absolute backward error `||R(C̃)||_F`. Infeasible cells carry NaN in
/// every float column.
#[derive(Debug, Clone)]
pub struct SyntheticRow {
    pub rank: usize,
    pub rel_error: f64,
    pub residual: f64,
    pub fwd_bound: f64,
    pub optimal_truncation: f64,
    pub feasible: bool,
}

pub fn run_synthetic(spec: &ExperimentSpec) -> Result<Vec<SyntheticRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = prepare_base(spec.family, spec.n, spec.matrix_path.as_deref(), &mut rng)?;
    let n = base.dense.nrows();
    spec.validate_common(n)?;
    spec.validate_ranks(n)?;
    let mut z = gaussian_factor(&mut rng, n, 1);
    if spec.alpha == Sign::Minus {
        z *= spec.downdate_scale;
    }

    let a_sym = DenseSymmetric::new(base.dense.clone())?;
    let spectrum = match exact_delta_spectrum(&a_sym, &z, spec.alpha, spec.beta) {
        Ok(sv) => sv,
        Err(Error::InfeasibleDowndate { .. }) => {
            return Ok(spec.rank_sweep.iter().map(|&r| infeasible_row(r)).collect());
        }
        Err(e) => return Err(e.into()),
    };

    let mut b = base.dense.clone();
    b += (&z * z.transpose()) * spec.alpha.value();
    let inverse = spec.beta == Sign::Minus;
    let base_root = dense_principal_root(&base.dense, 2, inverse)?;
    let target = dense_principal_root(&b, 2, inverse)?;
    let target_norm = target.norm();
    let b_sym = DenseSymmetric::new(b.clone())?;
    let evs = b_sym.eigenvalues();
    // Smallest eigenvalue of the perturbed power B^beta.
    let lambda_min_power = match spec.beta {
        Sign::Plus => evs[0],
        Sign::Minus => 1.0 / evs[evs.len() - 1],
    };

    let mut rows = Vec::with_capacity(spec.rank_sweep.len());
    let mut corrections: Vec<Option<LowRankFactor>> =
        Vec::with_capacity(spec.rank_sweep.len());
    for &r in &spec.rank_sweep {
        let mut cfg = SolverConfig::default();
        cfg.tol = spec.tol;
        cfg.seed = spec.seed;
        let req = UpdateRequest {
            sqrt_op: Some(base.sqrt.as_ref()),
            inv_sqrt_op: Some(base.inv_sqrt.as_ref()),
            z: z.clone(),
            alpha: spec.alpha,
            beta: spec.beta,
            rank: r,
            solver_cfg: cfg,
        };
        match update_correction(&req) {
            Ok(res) => {
                let approx = &base_root + res.correction.to_dense();
                let rel_error = (&target - &approx).norm() / target_norm;
                let report = error_report(
                    res.residual_norm,
                    n,
                    lambda_min_power,
                    LambdaMinSource::DenseOracle,
                )?;
                rows.push(SyntheticRow {
                    rank: r,
                    rel_error,
                    residual: res.residual_norm,
                    fwd_bound: report.forward_fro_bound / target_norm,
                    optimal_truncation: spectrum_tail_norm(&spectrum, r) / target_norm,
                    feasible: true,
                });
                corrections.push(Some(res.correction));
            }
            Err(Error::InfeasibleDowndate { .. }) => {
                rows.push(infeasible_row(r));
                corrections.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if spec.verify {
        verify_synthetic(&rows, &corrections, &base_root, &target, target_norm, &b_sym, spec.beta)?;
    }
    Ok(rows)
}

fn infeasible_row(rank: usize) -> SyntheticRow {
    SyntheticRow {
        rank,
        rel_error: f64::NAN,
        residual: f64::NAN,
        fwd_bound: f64::NAN,
        optimal_truncation: f64::NAN,
        feasible: false,
    }
}

/// Independent dense recheck of the emitted grid: the relative error from a
/// fresh reconstruction, and the residual against the dense backward error
/// `||W² − B^beta||_F` of the corrected root `W` (they agree exactly in
/// real arithmetic).
fn verify_synthetic(
    rows: &[SyntheticRow],
    corrections: &[Option<LowRankFactor>],
    base_root: &DMatrix<f64>,
    target: &DMatrix<f64>,
    target_norm: f64,
    b_sym: &DenseSymmetric,
    beta: Sign,
) -> Result<()> {
    let b_beta = match beta {
        Sign::Plus => b_sym.matrix().clone_owned(),
        Sign::Minus => b_sym.inverse()?.matrix().clone_owned(),
    };
    let scale = b_beta.norm();
    for (row, corr) in rows.iter().zip(corrections) {
        let Some(corr) = corr else { continue };
        let approx = base_root + corr.to_dense();
        let rel = (target - &approx).norm() / target_norm;
        if (rel - row.rel_error).abs() > VERIFY_MATCH_TOL {
            return Err(CliError::Verify(format!(
                "rank {}: emitted rel_error {:.6e} vs recomputed {:.6e}",
                row.rank, row.rel_error, rel
            )));
        }
        let dense_backward = (&approx * &approx - &b_beta).norm();
        if (dense_backward - row.residual).abs() > VERIFY_RESIDUAL_TOL * (scale + row.residual) {
            return Err(CliError::Verify(format!(
                "rank {}: emitted residual {:.6e} vs dense backward error {:.6e}",
                row.rank, row.residual, dense_backward
            )));
        }
    }
    Ok(())
}

pub fn synthetic_csv(rows: &[SyntheticRow]) -> String {
    let mut out = String::from(
        "# schema: lrsqrt-synthetic-v1\nrank,rel_error,residual,fwd_bound,optimal_truncation_error,status\n",
    );
    for r in rows {
        let status = if r.feasible { "ok" } else { "infeasible" };
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{}",
            r.rank, r.rel_error, r.residual, r.fwd_bound, r.optimal_truncation, status
        );
    }
    out
}

/// One emitted decay comparison point: the observed head ratio
/// `sigma_{1+l·k} / sigma_1` of the exact correction against the a-priori
/// factor at shift `l`.
#[derive(Debug, Clone)]
pub struct DecayRow {
    pub index: usize,
    pub actual_sigma_ratio: f64,
    pub bound_factor: f64,
}

pub fn run_decay(spec: &ExperimentSpec) -> Result<Vec<DecayRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = prepare_base(spec.family, spec.n, spec.matrix_path.as_deref(), &mut rng)?;
    let n = base.dense.nrows();
    spec.validate_common(n)?;
    let mut z = gaussian_factor(&mut rng, n, 1);
    if spec.alpha == Sign::Minus {
        z *= spec.downdate_scale;
    }
    decay_rows(&base, &z, spec.alpha, spec.beta, spec.verify)
}

/// The bound is stated for the update view `S → S + zzᵀ`; for a downdate
/// the roles of the two matrices swap and `|Delta|` is unchanged, so `S` is
/// always the smaller matrix of the pair.
fn decay_rows(
    base: &PreparedBase,
    z: &DMatrix<f64>,
    alpha: Sign,
    beta: Sign,
    full_sweep: bool,
) -> Result<Vec<DecayRow>> {
    let n = base.dense.nrows();
    let k = z.ncols();
    if k == 0 {
        return Ok(Vec::new());
    }
    let a_sym = DenseSymmetric::new(base.dense.clone())?;
    let spectrum = exact_delta_spectrum(&a_sym, z, alpha, beta)?;
    if spectrum.is_empty() || spectrum[0] == 0.0 {
        return Ok(Vec::new());
    }
    let norm_d = {
        let s1 = z.clone().svd(false, false).singular_values[0];
        s1 * s1
    };
    let (s_min, s_max, l_min) = match alpha {
        Sign::Plus => {
            let l_sym = DenseSymmetric::new(&base.dense + z * z.transpose())?;
            (base.lambda_min, base.lambda_max, l_sym.min_eigenvalue())
        }
        Sign::Minus => {
            let s_sym = DenseSymmetric::new(&base.dense - z * z.transpose())?;
            let evs = s_sym.eigenvalues();
            (evs[0], evs[evs.len() - 1], base.lambda_min)
        }
    };
    let params = match beta {
        Sign::Plus => DecayBoundParams::sqrt(s_max, norm_d, s_min, k)?,
        Sign::Minus => DecayBoundParams::inv_sqrt(s_min, s_max, norm_d, l_min, k)?,
    };

    let mut rows = Vec::new();
    let mut l = 0usize;
    while l * k < n {
        let factor = decay_bound_factor(&params, l)?;
        let actual = spectrum[l * k] / spectrum[0];
        if spectrum[l * k] > (factor + DECAY_SLACK) * spectrum[0] {
            return Err(CliError::Verify(format!(
                "decay bound violated at l={l}: ratio {actual:.6e} exceeds factor {factor:.6e}"
            )));
        }
        rows.push(DecayRow {
            index: l,
            actual_sigma_ratio: actual,
            bound_factor: factor,
        });
        l += 1;
    }
    if full_sweep {
        for j in 0..n {
            let mut l = 0usize;
            while j + l * k < n {
                let factor = decay_bound_factor(&params, l)?;
                if spectrum[j + l * k] > factor * spectrum[j] + DECAY_SLACK * spectrum[0] {
                    return Err(CliError::Verify(format!(
                        "decay bound violated at j={} l={l}",
                        j + 1
                    )));
                }
                l += 1;
            }
        }
    }
    Ok(rows)
}

pub fn decay_csv(rows: &[DecayRow]) -> String {
    let mut out =
        String::from("# schema: lrsqrt-decay-v1\nindex,actual_sigma_ratio,bound_factor\n");
    for r in rows {
        let _ = writeln!(out, "{},{:e},{:e}", r.index, r.actual_sigma_ratio, r.bound_factor);
    }
    out
}

/// Setup for the preconditioner-tracking run. The full gradient stream is
/// replayed once per tolerance preset, identically seeded.
#[derive(Debug, Clone)]
pub struct TrackingSpec {
    pub m: usize,
    pub steps: usize,
    pub step_rank: usize,
    pub eps: f64,
    pub seed: u64,
    /// Inner solver tolerances, one full run each.
    pub presets: Vec<f64>,
    pub compression_cap: usize,
    pub output_path: Option<PathBuf>,
    pub verify: bool,
}

impl Default for TrackingSpec {
    fn default() -> Self {
        TrackingSpec {
            m: 200,
            steps: 40,
            step_rank: 5,
            eps: 1e-3,
            seed: 0,
            presets: vec![1e-4, 1e-6, 1e-8],
            compression_cap: 100,
            output_path: None,
            verify: false,
        }
    }
}

/// One tracking checkpoint, taken after step `t` (1-based).
#[derive(Debug, Clone)]
pub struct TrackingRow {
    pub tol: f64,
    pub t: usize,
    pub rel_error_inv_fourth: f64,
    pub width_inv_sqrt: usize,
    pub width_inv_fourth: usize,
    pub accepted: bool,
}

pub fn run_tracking(spec: &TrackingSpec) -> Result<Vec<TrackingRow>> {
    if spec.m == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()).into());
    }
    if spec.m > MAX_TRACKING_DIM {
        return Err(Error::DenseGuard(spec.m, MAX_TRACKING_DIM).into());
    }
    if spec.presets.is_empty() {
        return Err(
            Error::InvalidArgument("at least one tolerance preset is required".into()).into(),
        );
    }
    for &tol in &spec.presets {
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive and finite, got {tol}"
            ))
            .into());
        }
    }

    let mut rows = Vec::with_capacity(spec.presets.len() * spec.steps);
    for &tol in &spec.presets {
        let mut tracker =
            ShampooTracker::new(spec.m, spec.eps, spec.step_rank, spec.compression_cap)?
                .with_solver_tol(tol);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        // Ground truth of the stream; advances on rejected steps too.
        let mut l_dense = DMatrix::identity(spec.m, spec.m) * spec.eps;
        for t in 1..=spec.steps {
            let g = gradient_block(&mut rng, spec.m, spec.step_rank, t, spec.steps);
            l_dense += &g * g.transpose();
            let report = tracker.step(&g)?;
            let oracle = dense_principal_root(&l_dense, 4, true)?;
            let rel = (&tracker.inv_fourth().to_dense() - &oracle).norm() / oracle.norm();
            let width_inv_sqrt = tracker.inv_sqrt().total_width();
            let width_inv_fourth = tracker.inv_fourth().total_width();
            if width_inv_sqrt > spec.compression_cap || width_inv_fourth > spec.compression_cap
            {
                return Err(CliError::Verify(format!(
                    "tracked width exceeded the compression cap at step {t}"
                )));
            }
            rows.push(TrackingRow {
                tol,
                t,
                rel_error_inv_fourth: rel,
                width_inv_sqrt,
                width_inv_fourth,
                accepted: report.accepted,
            });
        }
        if spec.verify {
            verify_tracking(spec, tol, &tracker, &rows)?;
        }
    }
    Ok(rows)
}

/// Step `t` (1-based) of the synthetic gradient stream: a rank-`r` Gaussian
/// block whose energy sweeps log-uniformly from 50 down to 1e-6, mimicking
/// decaying gradient magnitudes over a training run.
fn gradient_block(
    rng: &mut ChaCha8Rng,
    m: usize,
    r: usize,
    t: usize,
    steps: usize,
) -> DMatrix<f64> {
    let frac = if steps <= 1 {
        0.0
    } else {
        (t - 1) as f64 / (steps - 1) as f64
    };
    let lg_hi = 50f64.log10();
    let lg_lo = -6.0;
    let sigma2 = 10f64.powf(lg_hi + frac * (lg_lo - lg_hi));
    gaussian_factor(rng, m, r) * (sigma2 / m as f64).sqrt()
}

/// Replays the stream independently, re-derives the final checkpoint, and
/// checks the tracked inverse fourth root stayed positive definite.
fn verify_tracking(
    spec: &TrackingSpec,
    tol: f64,
    tracker: &ShampooTracker,
    rows: &[TrackingRow],
) -> Result<()> {
    let fourth = tracker.inv_fourth().to_dense();
    let (vals, _) = sym_eigen_sorted(&fourth);
    if vals.len() > 0 && vals[0] <= 0.0 {
        return Err(CliError::Verify(format!(
            "tracked inverse fourth root lost positive definiteness (min eig {:.3e})",
            vals[0]
        )));
    }
    if spec.steps == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut l_replay = DMatrix::identity(spec.m, spec.m) * spec.eps;
    for t in 1..=spec.steps {
        let g = gradient_block(&mut rng, spec.m, spec.step_rank, t, spec.steps);
        l_replay += &g * g.transpose();
    }
    let oracle = dense_principal_root(&l_replay, 4, true)?;
    let rel = (&fourth - &oracle).norm() / oracle.norm();
    let last = rows
        .iter()
        .rev()
        .find(|r| r.tol == tol)
        .expect("verify runs after the preset emitted rows");
    if (rel - last.rel_error_inv_fourth).abs() > VERIFY_MATCH_TOL {
        return Err(CliError::Verify(format!(
            "final checkpoint mismatch at tol {tol:e}: emitted {:.6e}, replay {:.6e}",
            last.rel_error_inv_fourth, rel
        )));
    }
    Ok(())
}

pub fn tracking_csv(rows: &[TrackingRow]) -> String {
    let mut out = String::from(
        "# schema: lrsqrt-tracking-v1\ntol,t,rel_error_inv_fourth,width_inv_sqrt,width_inv_fourth,accepted\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:e},{},{:e},{},{},{}",
            r.tol, r.t, r.rel_error_inv_fourth, r.width_inv_sqrt, r.width_inv_fourth, r.accepted
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            n: 40,
            rank_sweep: vec![1, 2, 4, 8],
            seed: 3,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn synthetic_grid_is_seed_deterministic() {
        let spec = small_spec();
        let a = synthetic_csv(&run_synthetic(&spec).unwrap());
        let b = synthetic_csv(&run_synthetic(&spec).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("# schema: lrsqrt-synthetic-v1\n"));
        assert_eq!(a.lines().count(), 2 + spec.rank_sweep.len());
    }

    #[test]
    fn synthetic_error_decreases_with_rank() {
        let spec = small_spec();
        let rows = run_synthetic(&spec).unwrap();
        assert!(rows.iter().all(|r| r.feasible));
        let first = rows.first().unwrap().rel_error;
        let last = rows.last().unwrap().rel_error;
        assert!(last < first, "rel_error did not drop: {first:.3e} -> {last:.3e}");
        // The truncation floor is a lower bound on any rank-r correction.
        for r in &rows {
            assert!(r.rel_error + 1e-14 >= r.optimal_truncation * 0.99);
        }
    }

    #[test]
    fn zero_perturbation_gives_exactly_zero_error() {
        let spec = ExperimentSpec {
            alpha: Sign::Minus,
            downdate_scale: 0.0,
            ..small_spec()
        };
        let rows = run_synthetic(&spec).unwrap();
        for r in rows {
            assert!(r.feasible);
            assert_eq!(r.rel_error, 0.0);
            assert_eq!(r.residual, 0.0);
        }
    }

    #[test]
    fn oversized_downdate_marks_rows_infeasible() {
        let spec = ExperimentSpec {
            alpha: Sign::Minus,
            downdate_scale: 50.0,
            ..small_spec()
        };
        let rows = run_synthetic(&spec).unwrap();
        assert!(rows.iter().all(|r| !r.feasible));
        assert!(rows.iter().all(|r| r.rel_error.is_nan()));
        let csv = synthetic_csv(&rows);
        assert!(csv.contains("infeasible"));
    }

    #[test]
    fn synthetic_verify_mode_accepts_own_output() {
        let spec = ExperimentSpec {
            verify: true,
            beta: Sign::Minus,
            ..small_spec()
        };
        run_synthetic(&spec).unwrap();
    }

    #[test]
    fn rank_sweep_validation() {
        let bad = |ranks: Vec<usize>| ExperimentSpec {
            rank_sweep: ranks,
            ..small_spec()
        };
        assert!(run_synthetic(&bad(vec![])).is_err());
        assert!(run_synthetic(&bad(vec![0, 1])).is_err());
        assert!(run_synthetic(&bad(vec![3, 3])).is_err());
        assert!(run_synthetic(&bad(vec![5, 2])).is_err());
        assert!(run_synthetic(&bad(vec![1, 64])).is_err());
    }

    #[test]
    fn decay_rows_are_sound_and_deterministic() {
        let spec = ExperimentSpec {
            family: Family::LogspaceDiag,
            verify: true,
            ..small_spec()
        };
        let rows = run_decay(&spec).unwrap();
        assert_eq!(rows.len(), 40);
        assert_eq!(rows[0].actual_sigma_ratio, 1.0);
        assert_eq!(rows[0].bound_factor, 4.0);
        for r in &rows {
            assert!(r.actual_sigma_ratio <= r.bound_factor + DECAY_SLACK);
        }
        let again = run_decay(&spec).unwrap();
        assert_eq!(decay_csv(&rows), decay_csv(&again));
    }

    #[test]
    fn decay_empty_for_zero_width_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = prepare_base(Family::UniformDiag, 10, None, &mut rng).unwrap();
        let z = DMatrix::zeros(10, 0);
        let rows = decay_rows(&base, &z, Sign::Plus, Sign::Plus, false).unwrap();
        assert!(rows.is_empty());
        let z0 = DMatrix::zeros(10, 1);
        let rows = decay_rows(&base, &z0, Sign::Plus, Sign::Plus, false).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn tracking_header_only_for_zero_steps() {
        let spec = TrackingSpec {
            m: 10,
            steps: 0,
            presets: vec![1e-6],
            verify: true,
            ..TrackingSpec::default()
        };
        let rows = run_tracking(&spec).unwrap();
        assert!(rows.is_empty());
        let csv = tracking_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn tracking_short_run_is_deterministic_and_capped() {
        let spec = TrackingSpec {
            m: 30,
            steps: 4,
            step_rank: 2,
            presets: vec![1e-4, 1e-8],
            compression_cap: 20,
            verify: true,
            ..TrackingSpec::default()
        };
        let rows = run_tracking(&spec).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.accepted));
        assert!(rows.iter().all(|r| r.width_inv_fourth <= 20));
        let again = run_tracking(&spec).unwrap();
        assert_eq!(tracking_csv(&rows), tracking_csv(&again));
        // Tighter inner tolerance cannot hurt the final checkpoint much.
        let loose = rows.iter().find(|r| r.tol == 1e-4 && r.t == 4).unwrap();
        let tight = rows.iter().find(|r| r.tol == 1e-8 && r.t == 4).unwrap();
        assert!(tight.rel_error_inv_fourth <= loose.rel_error_inv_fourth * 10.0 + 1e-12);
    }
}
