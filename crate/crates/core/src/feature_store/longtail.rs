use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::rng::{domain, StreamId};

/// Per-class sample counts of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub counts: Vec<usize>,
    pub head_count: usize,
    /// Smallest nonzero count.
    pub tail_count: usize,
    pub imbalance_factor: f64,
    /// Classes with no samples. They are left out of `tail_count`.
    pub empty_classes: Vec<usize>,
}

impl ClassProfile {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        let nonzero = counts.iter().copied().filter(|&c| c > 0);
        let head_count =
            nonzero.clone().max().ok_or_else(|| Error::validation("class profile of a dataset with no samples"))?;
        let tail_count = nonzero.min().unwrap();
        let empty_classes: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] == 0).collect();
        if !empty_classes.is_empty() {
            log::warn!("{} classes have no samples; imbalance factor uses nonzero classes only", empty_classes.len());
        }
        Ok(ClassProfile {
            head_count,
            tail_count,
            imbalance_factor: head_count as f64 / tail_count as f64,
            empty_classes,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `(class, count)` pairs from largest to smallest; ties keep class order.
    pub fn sorted_desc(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = self.counts.iter().copied().enumerate().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

pub fn class_profile(dataset: &FeatureDataset) -> Result<ClassProfile> {
    if dataset.is_empty() {
        return Err(Error::validation("class profile of an empty dataset"));
    }
    ClassProfile::from_counts(dataset.class_counts())
}

/// How fractional class sizes are turned into integers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    HalfUp,
    Down,
    Up,
}

impl Rounding {
    fn apply(self, x: f64) -> f64 {
        // powf leaves ~1 ulp of noise on exact integers such as 500 * 100^-1
        let nearest = x.round();
        if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
            return nearest;
        }
        match self {
            Rounding::HalfUp => (x + 0.5).floor(),
            Rounding::Down => x.floor(),
            Rounding::Up => x.ceil(),
        }
    }
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-up" => Ok(Rounding::HalfUp),
            "down" => Ok(Rounding::Down),
            "up" => Ok(Rounding::Up),
            other => Err(Error::validation(format!("unknown rounding mode {other:?}"))),
        }
    }
}

/// Exponentially decaying class sizes: `n_head * imbalance^(-k / (K - 1))`.
pub fn make_longtail_counts(
    n_head: usize,
    num_classes: usize,
    imbalance_factor: f64,
    rounding: Rounding,
) -> Result<Vec<usize>> {
    if n_head < 1 {
        return Err(Error::validation("n_head must be at least 1"));
    }
    if num_classes < 2 {
        return Err(Error::validation("need at least 2 classes for a long-tail profile"));
    }
    if !(imbalance_factor >= 1.0 && imbalance_factor.is_finite()) {
        return Err(Error::validation(format!("imbalance factor must be finite and >= 1, got {imbalance_factor}")));
    }
    let last = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|k| {
            let raw = n_head as f64 / imbalance_factor.powf(k as f64 / last);
            (rounding.apply(raw) as usize).max(1)
        })
        .collect())
}

/// Keeps `counts[k]` uniformly chosen rows of each class, in original row order.
pub fn subsample_longtail(dataset: &FeatureDataset, counts: &[usize], seed: u64) -> Result<FeatureDataset> {
    if counts.len() != dataset.num_classes() {
        return Err(Error::validation(format!("{} counts for {} classes", counts.len(), dataset.num_classes())));
    }
    let groups = dataset.class_indices();
    let mut keep = Vec::with_capacity(counts.iter().sum());
    for (k, (group, &want)) in groups.iter().zip(counts).enumerate() {
        if want > group.len() {
            return Err(Error::validation(format!("class {k} has {} samples, {want} requested", group.len())));
        }
        let mut rng = StreamId::new(seed, &[domain::SUBSAMPLE, k as u64]).rng();
        keep.extend(index::sample(&mut rng, group.len(), want).into_iter().map(|i| group[i]));
    }
    keep.sort_unstable();
    Ok(dataset.subset(&keep))
}
