//! Multivariate normal draws with a jittered Cholesky factorization.
//!
//! Averaged covariances of small tail classes are often rank deficient, so
//! [`cholesky_psd`] retries with `jitter * I` added to the diagonal, growing
//! the jitter tenfold per attempt from `1e-10`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibrate::CalibratedGaussian;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::StreamId;

pub const DEFAULT_MAX_JITTER: f64 = 1e-4;
const FIRST_JITTER: f64 = 1e-10;

/// Lower-triangular `L` with `L Lᵀ = covariance + jitter_used * I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CholeskyFactor {
    pub lower: Matrix,
    pub jitter_used: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }
}

fn jitter_schedule(max_jitter: f64) -> Vec<f64> {
    let mut steps = vec![0.0];
    let mut i = 0;
    loop {
        let j = FIRST_JITTER * 10f64.powi(i);
        if j > max_jitter * (1.0 + 1e-9) {
            break;
        }
        steps.push(j.min(max_jitter));
        i += 1;
    }
    if max_jitter > 0.0 && *steps.last().unwrap() < max_jitter * (1.0 - 1e-9) {
        steps.push(max_jitter);
    }
    steps
}

fn try_cholesky(cov: &Matrix, jitter: f64) -> Option<Matrix> {
    let d = cov.rows();
    let mut l = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let mut s = cov[(i, j)];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Factors `covariance + jitter * I` with the smallest jitter on the schedule that works.
pub fn cholesky_psd(covariance: &Matrix, max_jitter: f64) -> Result<CholeskyFactor> {
    let d = covariance.rows();
    if covariance.cols() != d {
        return Err(Error::validation(format!("covariance is {}x{}", d, covariance.cols())));
    }
    let asym = covariance.max_asymmetry();
    if asym > 1e-9 {
        return Err(Error::validation(format!("covariance asymmetry {asym:e} exceeds 1e-9")));
    }
    if !covariance.is_finite() {
        return Err(Error::Numerical("covariance contains NaN or infinity".into()));
    }
    for jitter in jitter_schedule(max_jitter) {
        if let Some(lower) = try_cholesky(covariance, jitter) {
            return Ok(CholeskyFactor { lower, jitter_used: jitter });
        }
    }
    let smallest = nalgebra::SymmetricEigen::new(covariance.to_nalgebra()).eigenvalues.min();
    Err(Error::Numerical(format!(
        "covariance is not PSD even with jitter {max_jitter:e}; smallest eigenvalue ~ {smallest:e}"
    )))
}

/// Factor used when drawing: an exactly zero covariance is a point mass and
/// gets a zero factor, anything else goes through [`cholesky_psd`].
pub fn factor_for_sampling(covariance: &Matrix, max_jitter: f64) -> Result<CholeskyFactor> {
    if covariance.rows() == covariance.cols() && covariance.as_slice().iter().all(|&v| v == 0.0) {
        let d = covariance.rows();
        return Ok(CholeskyFactor { lower: Matrix::zeros(d, d), jitter_used: 0.0 });
    }
    cholesky_psd(covariance, max_jitter)
}

/// `n` draws of `mean + L ε`, one row per draw, from the stream `stream`.
pub fn sample_with_factor(mean: &[f64], factor: &CholeskyFactor, n: usize, stream: &StreamId) -> Result<Matrix> {
    let d = mean.len();
    if factor.dim() != d {
        return Err(Error::validation(format!("mean has {d} entries, factor is {}x{}", factor.dim(), factor.dim())));
    }
    let mut rng = stream.rng();
    let mut out = Matrix::zeros(n, d);
    let mut eps = vec![0.0; d];
    for r in 0..n {
        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
        let row = out.row_mut(r);
        for i in 0..d {
            let li = &factor.lower.row(i)[..=i];
            row[i] = mean[i] + li.iter().zip(&eps).map(|(a, e)| a * e).sum::<f64>();
        }
    }
    Ok(out)
}

/// Draws `n` rows from a calibrated Gaussian.
pub fn sample_gaussian(dist: &CalibratedGaussian, n: usize, stream: &StreamId, max_jitter: f64) -> Result<Matrix> {
    if n == 0 {
        return Ok(Matrix::zeros(0, dist.mean.len()));
    }
    let factor = factor_for_sampling(&dist.covariance, max_jitter)?;
    sample_with_factor(&dist.mean, &factor, n, stream)
}
