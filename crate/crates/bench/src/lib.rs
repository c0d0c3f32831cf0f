//! Fixtures shared by the benchmarks.

use tailcalib::feature_store::{make_longtail_counts, synth_gaussian_dataset, Rounding, SyntheticWorldSpec};
use tailcalib::{FeatureDataset, Matrix};

/// A long-tail Gaussian world with `k` classes in `d` dimensions, head class `n_head` rows.
pub fn longtail_world(k: usize, d: usize, n_head: usize, imbalance: f64, seed: u64) -> FeatureDataset {
    let counts = make_longtail_counts(n_head, k, imbalance, Rounding::HalfUp).expect("valid profile");
    let means = Matrix::from_fn(k, d, |c, j| ((c * 31 + j * 17) % 13) as f64 / 6.5 - 1.0);
    synth_gaussian_dataset(&SyntheticWorldSpec::isotropic(means, 0.1, counts, seed)).expect("valid world")
}

/// A well-conditioned `d x d` covariance.
pub fn spd_matrix(d: usize) -> Matrix {
    let a = Matrix::from_fn(d, d, |i, j| (((i * 7 + j * 3) % 11) as f64 - 5.0) / 10.0);
    let mut m = a.matmul(&a.transpose()).expect("square");
    for i in 0..d {
        m.as_mut_slice()[i * d + i] += 1.0;
    }
    m
}
