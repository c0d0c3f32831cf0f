//! Reference rebalancing strategies to compare calibrated generation against.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::matrix::Matrix;
use crate::rng::{domain, StreamId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Oversample,
    GaussianNoise,
    FeatureMixup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub noise_scale: f64,
    pub mixup_alpha: f64,
    pub seed: u64,
}

impl BaselineSpec {
    /// Noise 0.01 and mixup alpha 0.01.
    pub fn new(kind: BaselineKind, seed: u64) -> Self {
        BaselineSpec { kind, noise_scale: 0.01, mixup_alpha: 0.01, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::validation(format!("noise scale must be >= 0, got {}", self.noise_scale)));
        }
        if !(self.mixup_alpha.is_finite() && self.mixup_alpha > 0.0) {
            return Err(Error::validation(format!("mixup alpha must be > 0, got {}", self.mixup_alpha)));
        }
        Ok(())
    }
}

/// For each class, the source rows of its padding, drawn with replacement.
fn padding_sources(dataset: &FeatureDataset, target: usize, seed: u64) -> Result<Vec<(u32, Vec<usize>)>> {
    dataset.require_all_classes()?;
    let groups = dataset.class_indices();
    let max = groups.iter().map(Vec::len).max().unwrap_or(0);
    if target < max {
        return Err(Error::validation(format!("target count {target} is below the largest class ({max})")));
    }
    Ok(groups
        .iter()
        .enumerate()
        .map(|(k, rows)| {
            let mut rng = StreamId::new(seed, &[domain::OVERSAMPLE, k as u64]).rng();
            let picks = (rows.len()..target).map(|_| rows[rng.random_range(0..rows.len())]).collect();
            (k as u32, picks)
        })
        .collect())
}

fn padded(
    dataset: &FeatureDataset,
    sources: &[(u32, Vec<usize>)],
    noise: Option<(f64, u64)>,
) -> Result<FeatureDataset> {
    let d = dataset.dim();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (k, rows) in sources {
        let mut rng = noise.map(|(_, seed)| StreamId::new(seed, &[domain::NOISE, *k as u64]).rng());
        for &r in rows {
            let src = dataset.features().row(r);
            match (&mut rng, noise) {
                (Some(rng), Some((scale, _))) => {
                    data.extend(src.iter().map(|v| {
                        let e: f64 = StandardNormal.sample(rng);
                        v + scale * e
                    }));
                }
                _ => data.extend_from_slice(src),
            }
            labels.push(*k);
        }
    }
    let extra = FeatureDataset::new(Matrix::from_vec(labels.len(), d, data)?, labels, dataset.num_classes())?;
    dataset.concat(&extra.into_synthetic())
}

/// Pads every class to `target` rows by duplicating its rows at random.
///
/// Returns the original rows followed by the padding, which is flagged synthetic.
pub fn oversample_balance(dataset: &FeatureDataset, target: usize, seed: u64) -> Result<FeatureDataset> {
    let sources = padding_sources(dataset, target, seed)?;
    padded(dataset, &sources, None)
}

/// Like [`oversample_balance`], with `noise_scale * N(0, I)` added to each duplicate.
///
/// A zero scale reproduces [`oversample_balance`] bit for bit.
pub fn gaussian_noise_balance(
    dataset: &FeatureDataset,
    target: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<FeatureDataset> {
    if !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(Error::validation(format!("noise scale must be >= 0, got {noise_scale}")));
    }
    let sources = padding_sources(dataset, target, seed)?;
    let noise = (noise_scale > 0.0).then_some((noise_scale, seed));
    padded(dataset, &sources, noise)
}

/// `w * a + (1 - w) * b` for every row `a` and its partner row `b`, for features and targets alike.
pub fn mix_pairs(features: &Matrix, targets: &Matrix, partner: &[usize], w: f64) -> Result<(Matrix, Matrix)> {
    if features.rows() != targets.rows() || partner.len() != features.rows() {
        return Err(Error::validation("mixup inputs differ in row count"));
    }
    let mix = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |i, j| w * m[(i, j)] + (1.0 - w) * m[(partner[i], j)]);
    Ok((mix(features), mix(targets)))
}

/// Mixes a batch with a shuffled copy of itself using one `Beta(alpha, alpha)` weight.
pub fn feature_mixup_batch(
    features: &Matrix,
    targets: &Matrix,
    alpha: f64,
    stream: &StreamId,
) -> Result<(Matrix, Matrix)> {
    if features.rows() == 0 {
        return Err(Error::validation("mixup of an empty batch"));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::validation(format!("mixup alpha {alpha}: {e}")))?;
    let mut rng = stream.rng();
    let mut partner: Vec<usize> = (0..features.rows()).collect();
    partner.shuffle(&mut rng);
    let w = beta.sample(&mut rng);
    mix_pairs(features, targets, &partner, w)
}
