//! Experiment matrix families and seeded perturbation factors.

use std::path::Path;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lrsqrt::operators::{mm, DenseSymmetric, DiagonalOperator};
use lrsqrt::{Error, Result, SymmetricOperator};

/// Uniform diagonal entries get this additive floor so the matrix cannot be
/// numerically singular on an unlucky draw.
const UNIFORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Diagonal with entries drawn from U(0,1).
    #[value(name = "uniform_diag")]
    UniformDiag,
    /// Diagonal with entries logarithmically spaced in [1e-3, 1e3].
    #[value(name = "logspace_diag")]
    LogspaceDiag,
    /// Symmetric positive definite matrix from a Matrix Market file.
    #[value(name = "file")]
    File,
}

/// A base matrix prepared for correction experiments: dense form for the
/// oracles, both root operators for the solver, and spectral extremes for
/// the analysis bounds.
pub struct PreparedBase {
    pub dense: DMatrix<f64>,
    pub sqrt: Box<dyn SymmetricOperator>,
    pub inv_sqrt: Box<dyn SymmetricOperator>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

pub fn prepare_base(
    family: Family,
    n: usize,
    matrix_path: Option<&Path>,
    rng: &mut ChaCha8Rng,
) -> Result<PreparedBase> {
    match family {
        Family::UniformDiag => {
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0) + UNIFORM_FLOOR);
            diagonal_base(d)
        }
        Family::LogspaceDiag => {
            let d = DVector::from_fn(n, |i, _| {
                if n == 1 {
                    1e-3
                } else {
                    10f64.powf(-3.0 + 6.0 * i as f64 / (n - 1) as f64)
                }
            });
            diagonal_base(d)
        }
        Family::File => {
            let path = matrix_path.ok_or_else(|| {
                Error::InvalidArgument("family 'file' requires --matrix <path>".into())
            })?;
            let m = mm::read_matrix_path(path)?;
            let sym = DenseSymmetric::new(m)?;
            let lambda_min = sym.min_eigenvalue();
            if lambda_min <= 0.0 {
                return Err(Error::NotPd { min_eig: lambda_min });
            }
            let lambda_max = sym.eigenvalues()[sym.eigenvalues().len() - 1];
            let dense = sym.matrix().clone_owned();
            let sqrt = sym.principal_root(2, false)?;
            let inv_sqrt = sym.principal_root(2, true)?;
            Ok(PreparedBase {
                dense,
                sqrt: Box::new(sqrt),
                inv_sqrt: Box::new(inv_sqrt),
                lambda_min,
                lambda_max,
            })
        }
    }
}

fn diagonal_base(d: DVector<f64>) -> Result<PreparedBase> {
    let lambda_min = d.min();
    let lambda_max = d.max();
    let dense = DMatrix::from_diagonal(&d);
    let diag = DiagonalOperator::new(d)?;
    Ok(PreparedBase {
        dense,
        sqrt: Box::new(diag.powf(0.5)),
        inv_sqrt: Box::new(diag.powf(-0.5)),
        lambda_min,
        lambda_max,
    })
}

/// Seeded standard normal n x k factor.
pub fn gaussian_factor(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng))
}
