use nalgebra::SymmetricEigen;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{domain, StreamId};

/// Parameters of a Gaussian-mixture toy world, one component per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldSpec {
    /// K x D.
    pub class_means: Matrix,
    /// One D x D covariance per class.
    pub class_covariances: Vec<Matrix>,
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl SyntheticWorldSpec {
    pub fn num_classes(&self) -> usize {
        self.class_means.rows()
    }

    pub fn dim(&self) -> usize {
        self.class_means.cols()
    }

    /// Every class shares the isotropic covariance `variance * I`.
    pub fn isotropic(class_means: Matrix, variance: f64, counts: Vec<usize>, seed: u64) -> Self {
        let d = class_means.cols();
        let mut cov = Matrix::identity(d);
        cov.as_mut_slice().iter_mut().for_each(|v| *v *= variance);
        SyntheticWorldSpec { class_covariances: vec![cov; class_means.rows()], class_means, counts, seed }
    }
}

/// Square-root factor `A` with `A Aᵀ = cov`, via a symmetric eigendecomposition.
///
/// Exact zeros stay exact zeros, so a zero covariance reproduces the mean.
fn psd_root(cov: &Matrix, class: usize) -> Result<Matrix> {
    let d = cov.rows();
    if cov.cols() != d {
        return Err(Error::validation(format!("class {class}: covariance is not square")));
    }
    if cov.max_asymmetry() > 1e-9 {
        return Err(Error::validation(format!("class {class}: covariance is not symmetric")));
    }
    let eig = SymmetricEigen::new(cov.to_nalgebra());
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-9 * scale {
        return Err(Error::validation(format!("class {class}: covariance is not PSD (smallest eigenvalue {min:e})")));
    }
    Ok(Matrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()))
}

/// Draws `counts[k]` rows from `N(mean_k, cov_k)` for every class; rows are grouped by class.
pub fn synth_gaussian_dataset(spec: &SyntheticWorldSpec) -> Result<FeatureDataset> {
    let k = spec.num_classes();
    let d = spec.dim();
    if spec.class_covariances.len() != k || spec.counts.len() != k {
        return Err(Error::validation(format!(
            "{k} means, {} covariances, {} counts",
            spec.class_covariances.len(),
            spec.counts.len()
        )));
    }
    if let Some(c) = spec.counts.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!("class {c} has a zero count")));
    }
    let n: usize = spec.counts.iter().sum();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut eps = vec![0.0; d];
    for class in 0..k {
        if spec.class_covariances[class].rows() != d {
            return Err(Error::validation(format!("class {class}: covariance is not {d}x{d}")));
        }
        let root = psd_root(&spec.class_covariances[class], class)?;
        let mean = spec.class_means.row(class);
        let mut rng = StreamId::new(spec.seed, &[domain::SYNTH, class as u64]).rng();
        for _ in 0..spec.counts[class] {
            eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
            for (i, m) in mean.iter().enumerate() {
                let shift: f64 = root.row(i).iter().zip(&eps).map(|(a, e)| a * e).sum();
                data.push(m + shift);
            }
            labels.push(class as u32);
        }
    }
    FeatureDataset::new(Matrix::from_vec(n, d, data)?, labels, k)
}
