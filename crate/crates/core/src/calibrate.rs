//! Calibrated feature generation.
//!
//! Every real feature of an under-represented class is paired with its `M`
//! nearest class centroids (in the Tukey-transformed space). The feature and
//! those centroids define an instance-specific Gaussian:
//!
//! ```text
//! mean = (sum of neighbor means + z) / (M + 1)
//! cov  = (sum of neighbor covariances) / M + alpha
//! ```
//!
//! and each class draws exactly `target - N_k` new features from these
//! Gaussians, spread over its instances by [`generation_quotas`].

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::matrix::{euclidean, Matrix};
use crate::rng::{domain, StreamId};
use crate::sampler::{self, CholeskyFactor, DEFAULT_MAX_JITTER};
use crate::transform::{class_statistics, l2_normalize, tukey_transform, ClassStats, PowerMode, TukeyParam};

/// How the spread constant is added to the averaged covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Added to every entry (`+ alpha * 11ᵀ`), which keeps the matrix PSD.
    #[default]
    AllEntries,
    /// Added to the diagonal only.
    Diagonal,
}

/// Which features the class statistics are estimated from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsSpace {
    #[default]
    Transformed,
    /// Before the Tukey transform (after optional normalization). For ablations.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Tukey exponent; `None` skips the transform.
    pub lambda: Option<TukeyParam>,
    pub power_mode: PowerMode,
    /// Number of neighbor classes `M`.
    pub neighbors: usize,
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    /// Unit-normalize rows before the pipeline and generated rows after it.
    pub normalize: bool,
    pub stats_space: StatsSpace,
    pub seed: u64,
    /// Rows per class after balancing; defaults to the largest class.
    pub target_count: Option<usize>,
    pub max_jitter: f64,
}

impl Default for GenerationConfig {
    /// The CIFAR-100-LT, imbalance 100 setting: lambda 1.0, three neighbors, no spread.
    fn default() -> Self {
        GenerationConfig {
            lambda: Some(TukeyParam::identity()),
            power_mode: PowerMode::Strict,
            neighbors: 3,
            alpha: 0.0,
            alpha_mode: AlphaMode::AllEntries,
            normalize: false,
            stats_space: StatsSpace::Transformed,
            seed: 0,
            target_count: None,
            max_jitter: DEFAULT_MAX_JITTER,
        }
    }
}

impl GenerationConfig {
    /// Preset for CIFAR-100-LT features at imbalance 10, 50 or 100.
    pub fn cifar100_lt(imbalance: u32) -> Option<Self> {
        let (lambda, neighbors, alpha) = match imbalance {
            100 => (1.0, 3, 0.0),
            50 => (0.9, 2, 0.2),
            10 => (0.9, 2, 0.0),
            _ => return None,
        };
        Some(GenerationConfig {
            lambda: Some(TukeyParam::new(lambda).unwrap()),
            neighbors,
            alpha,
            ..Default::default()
        })
    }

    /// Preset for mini-ImageNet-LT features.
    pub fn mini_imagenet_lt() -> Self {
        GenerationConfig { neighbors: 2, alpha: 0.1, ..Default::default() }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::validation("neighbor count M must be at least 1"));
        }
        if self.neighbors > num_classes {
            return Err(Error::validation(format!(
                "neighbor count M={} exceeds class count {num_classes}",
                self.neighbors
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::validation(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.max_jitter.is_finite() && self.max_jitter >= 0.0) {
            return Err(Error::validation("max_jitter must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Instance-specific Gaussian a real feature generates from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedGaussian {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub label: u32,
    pub source_index: usize,
}

/// The `m` classes whose means are closest to `z`, nearest first; ties go to the lower id.
pub fn nearest_class_means(z: &[f64], stats: &ClassStats, m: usize) -> Result<Vec<usize>> {
    let k = stats.num_classes();
    if m > k {
        return Err(Error::validation(format!("neighbor count M={m} exceeds class count {k}")));
    }
    if z.len() != stats.dim() {
        return Err(Error::validation(format!("feature has {} entries, statistics have {}", z.len(), stats.dim())));
    }
    let mut ranked: Vec<(f64, usize)> = (0..k).map(|c| (euclidean(z, stats.mean(c)), c)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(m).map(|(_, c)| c).collect())
}

/// Averaged covariance of a neighbor set plus the spread term.
///
/// Summed in ascending class order so the result depends only on the set.
fn neighbor_covariance(neighbors: &[usize], stats: &ClassStats, alpha: f64, mode: AlphaMode) -> Matrix {
    let d = stats.dim();
    let mut sorted = neighbors.to_vec();
    sorted.sort_unstable();
    let mut cov = Matrix::zeros(d, d);
    for &c in &sorted {
        cov.as_mut_slice().iter_mut().zip(stats.covariances[c].as_slice()).for_each(|(a, b)| *a += b);
    }
    let m = sorted.len() as f64;
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= m);
    if alpha != 0.0 {
        match mode {
            AlphaMode::AllEntries => cov.as_mut_slice().iter_mut().for_each(|v| *v += alpha),
            AlphaMode::Diagonal => (0..d).for_each(|i| cov[(i, i)] += alpha),
        }
    }
    cov
}

fn calibrated_mean(z: &[f64], neighbors: &[usize], stats: &ClassStats) -> Vec<f64> {
    let mut mean = vec![0.0; z.len()];
    for &c in neighbors {
        mean.iter_mut().zip(stats.mean(c)).for_each(|(a, b)| *a += b);
    }
    let w = (neighbors.len() + 1) as f64;
    mean.iter_mut().zip(z).for_each(|(a, b)| *a = (*a + b) / w);
    mean
}

/// Builds the calibrated Gaussian for one (transformed) feature.
pub fn calibrated_distribution(
    z: &[f64],
    neighbors: &[usize],
    stats: &ClassStats,
    alpha: f64,
    alpha_mode: AlphaMode,
    label: u32,
    source_index: usize,
) -> Result<CalibratedGaussian> {
    if neighbors.is_empty() {
        return Err(Error::validation("calibration needs at least one neighbor class"));
    }
    if let Some(&bad) = neighbors.iter().find(|&&c| c >= stats.num_classes()) {
        return Err(Error::validation(format!("neighbor class {bad} out of range")));
    }
    if z.len() != stats.dim() {
        return Err(Error::validation(format!("feature has {} entries, statistics have {}", z.len(), stats.dim())));
    }
    Ok(CalibratedGaussian {
        mean: calibrated_mean(z, neighbors, stats),
        covariance: neighbor_covariance(neighbors, stats, alpha, alpha_mode),
        label,
        source_index,
    })
}

/// Which instances of each class generate, and how many features each.
///
/// Instance indices are positions within the class (`0..N_k`), not dataset rows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaPlan {
    pub per_class: Vec<Vec<(usize, usize)>>,
}

impl QuotaPlan {
    pub fn class_total(&self, class: usize) -> usize {
        self.per_class[class].iter().map(|&(_, n)| n).sum()
    }
}

/// Spreads each deficit `target - N_k` over the instances of class `k`.
///
/// Each chosen instance carries `q = ceil(target / N_k - 1)` features; the
/// deficit modulo `q`, if nonzero, goes to one more instance. Instances are
/// chosen uniformly without replacement.
pub fn generation_quotas(counts: &[usize], target: usize, seed: u64) -> Result<QuotaPlan> {
    if let Some(&max) = counts.iter().max() {
        if target < max {
            return Err(Error::validation(format!("target count {target} is below the largest class ({max})")));
        }
    }
    let mut per_class = Vec::with_capacity(counts.len());
    for (k, &n) in counts.iter().enumerate() {
        let deficit = target - n;
        if deficit == 0 {
            per_class.push(Vec::new());
            continue;
        }
        if n == 0 {
            return Err(Error::validation(format!("class {k} has no samples to generate from")));
        }
        // ceil(target/n - 1) == ceil(deficit/n), in exact integer arithmetic
        let quota = deficit.div_ceil(n);
        let full = deficit / quota;
        let rem = deficit % quota;
        let chosen = full + usize::from(rem > 0);
        let mut rng = StreamId::new(seed, &[domain::QUOTA, k as u64]).rng();
        let picks = index::sample(&mut rng, n, chosen).into_vec();
        let plan = picks.iter().enumerate().map(|(j, &i)| (i, if j < full { quota } else { rem })).collect();
        per_class.push(plan);
    }
    Ok(QuotaPlan { per_class })
}

/// Applies the optional normalization and the Tukey transform.
pub fn prepare_features(features: &Matrix, config: &GenerationConfig) -> Result<Matrix> {
    let base = if config.normalize { l2_normalize(features)? } else { features.clone() };
    match config.lambda {
        Some(lambda) => tukey_transform(&base, lambda, config.power_mode),
        None => Ok(base),
    }
}

/// Summary of one generation pass, written next to the generated features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub config: GenerationConfig,
    pub seed: u64,
    pub target_count: usize,
    pub original_counts: Vec<usize>,
    pub generated_counts: Vec<usize>,
    /// For each class, how often every class id was picked as a neighbor by its generating instances.
    pub neighbor_histogram: Vec<Vec<usize>>,
    pub max_jitter_used: f64,
}

/// Generated features plus the report describing them.
#[derive(Clone, Debug)]
pub struct Generation {
    /// Rows live in the prepared (normalized and transformed) space and are flagged synthetic.
    pub generated: FeatureDataset,
    pub report: GenerationReport,
}

/// Holds everything about a dataset that does not depend on the sampling seed:
/// prepared features, class statistics, neighbor sets and covariance factors.
///
/// [`Calibrator::generate`] can then be called once (one-shot balancing) or
/// once per epoch with fresh seeds.
#[derive(Clone, Debug)]
pub struct Calibrator {
    config: GenerationConfig,
    prepared: FeatureDataset,
    stats: ClassStats,
    groups: Vec<Vec<usize>>,
    counts: Vec<usize>,
    target: usize,
    neighbors: Vec<Vec<usize>>,
    factors: BTreeMap<Vec<usize>, CholeskyFactor>,
}

impl Calibrator {
    pub fn new(dataset: &FeatureDataset, config: &GenerationConfig) -> Result<Self> {
        config.validate(dataset.num_classes())?;
        dataset.require_all_classes()?;
        let counts = dataset.class_counts();
        let max = counts.iter().copied().max().unwrap_or(0);
        let target = config.target_count.unwrap_or(max);
        if target < max {
            return Err(Error::validation(format!("target count {target} is below the largest class ({max})")));
        }

        let normalized = if config.normalize { l2_normalize(dataset.features())? } else { dataset.features().clone() };
        let transformed = match config.lambda {
            Some(lambda) => tukey_transform(&normalized, lambda, config.power_mode)?,
            None => normalized.clone(),
        };
        let stats = match config.stats_space {
            StatsSpace::Transformed => class_statistics(&dataset.with_features(transformed.clone())?)?,
            StatsSpace::Raw => class_statistics(&dataset.with_features(normalized)?)?,
        };
        let prepared = dataset.with_features(transformed)?;

        let m = config.neighbors;
        let neighbors: Vec<Vec<usize>> = (0..prepared.len())
            .into_par_iter()
            .map(|i| nearest_class_means(prepared.features().row(i), &stats, m))
            .collect::<Result<_>>()?;

        let groups = dataset.class_indices();
        let mut sets: Vec<Vec<usize>> = groups
            .iter()
            .zip(&counts)
            .filter(|(_, &n)| n < target)
            .flat_map(|(rows, _)| rows.iter().map(|&r| sorted(&neighbors[r])))
            .collect();
        sets.sort();
        sets.dedup();
        let factors: Vec<CholeskyFactor> = sets
            .par_iter()
            .map(|set| {
                let cov = neighbor_covariance(set, &stats, config.alpha, config.alpha_mode);
                sampler::factor_for_sampling(&cov, config.max_jitter)
            })
            .collect::<Result<_>>()?;

        Ok(Calibrator {
            config: config.clone(),
            prepared,
            stats,
            groups,
            counts,
            target,
            neighbors,
            factors: sets.into_iter().zip(factors).collect(),
        })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn stats(&self) -> &ClassStats {
        &self.stats
    }

    /// Original rows in the space generation works in.
    pub fn prepared(&self) -> &FeatureDataset {
        &self.prepared
    }

    pub fn target_count(&self) -> usize {
        self.target
    }

    /// Neighbor classes of dataset row `row`, nearest first.
    pub fn neighbors_of(&self, row: usize) -> &[usize] {
        &self.neighbors[row]
    }

    /// Calibrated Gaussian of dataset row `row`.
    pub fn distribution_of(&self, row: usize) -> Result<CalibratedGaussian> {
        calibrated_distribution(
            self.prepared.features().row(row),
            &self.neighbors[row],
            &self.stats,
            self.config.alpha,
            self.config.alpha_mode,
            self.prepared.labels()[row],
            row,
        )
    }

    /// Draws the balancing features for one seed.
    pub fn generate(&self, seed: u64) -> Result<Generation> {
        let plan = generation_quotas(&self.counts, self.target, seed)?;
        let tasks: Vec<(usize, usize, usize)> = plan
            .per_class
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.iter().map(move |&(pos, n)| (k, pos, n)))
            .map(|(k, pos, n)| (k, self.groups[k][pos], n))
            .collect();

        let blocks: Vec<Matrix> = tasks
            .par_iter()
            .map(|&(k, row, n)| {
                let z = self.prepared.features().row(row);
                let nb = &self.neighbors[row];
                let factor = &self.factors[&sorted(nb)];
                let mean = calibrated_mean(z, nb, &self.stats);
                let stream = StreamId::new(seed, &[domain::GENERATE, k as u64, row as u64]);
                sampler::sample_with_factor(&mean, factor, n, &stream)
            })
            .collect::<Result<_>>()?;

        let d = self.prepared.dim();
        let total: usize = tasks.iter().map(|t| t.2).sum();
        let mut data = Vec::with_capacity(total * d);
        let mut labels = Vec::with_capacity(total);
        for (&(k, _, n), block) in tasks.iter().zip(&blocks) {
            data.extend_from_slice(block.as_slice());
            labels.extend(std::iter::repeat_n(k as u32, n));
        }
        let mut features = Matrix::from_vec(total, d, data)?;
        if self.config.normalize {
            features = l2_normalize(&features)?;
        }
        let generated = FeatureDataset::new(features, labels, self.counts.len())?.into_synthetic();

        let k = self.counts.len();
        let mut neighbor_histogram = vec![vec![0usize; k]; k];
        let mut max_jitter_used = 0.0f64;
        for &(class, row, _) in &tasks {
            for &c in &self.neighbors[row] {
                neighbor_histogram[class][c] += 1;
            }
            max_jitter_used = max_jitter_used.max(self.factors[&sorted(&self.neighbors[row])].jitter_used);
        }
        let report = GenerationReport {
            config: self.config.clone(),
            seed,
            target_count: self.target,
            original_counts: self.counts.clone(),
            generated_counts: (0..k).map(|c| plan.class_total(c)).collect(),
            neighbor_histogram,
            max_jitter_used,
        };
        Ok(Generation { generated, report })
    }
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

/// One balancing pass with `config.seed`: the features each class is missing.
pub fn generate_balanced(dataset: &FeatureDataset, config: &GenerationConfig) -> Result<Generation> {
    Calibrator::new(dataset, config)?.generate(config.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats_of(means: &[&[f64]], covs: Vec<Matrix>) -> ClassStats {
        ClassStats { means: Matrix::from_rows(means).unwrap(), counts: vec![1; covs.len()], covariances: covs }
    }

    fn scaled_identity(d: usize, s: f64) -> Matrix {
        let mut m = Matrix::identity(d);
        m.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        m
    }

    #[test]
    fn nearest_examples() {
        let stats =
            stats_of(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[3.0, 3.0], &[-1.0, 0.0]], vec![Matrix::zeros(2, 2); 5]);
        assert_eq!(nearest_class_means(&[3.0, 3.0], &stats, 1).unwrap(), vec![3]);
        // classes 0 and 2 are both at distance 1 from class 1's mean
        assert_eq!(nearest_class_means(&[1.0, 0.0], &stats, 3).unwrap(), vec![1, 0, 2]);
        assert!(nearest_class_means(&[1.0, 0.0], &stats, 6).is_err());
    }

    #[test]
    fn nearest_matches_exhaustive_sort() {
        let stats = stats_of(
            &[&[0.3, 0.1], &[-2.0, 1.0], &[4.0, 4.0], &[0.9, -0.7], &[1.5, 0.2]],
            vec![Matrix::zeros(2, 2); 5],
        );
        let z = [0.5, 0.5];
        // every permutation-free way: compute all distances and pick argmins one by one
        let mut left: Vec<usize> = (0..5).collect();
        let mut want = Vec::new();
        while !left.is_empty() {
            let (pos, _) = left
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = euclidean(&z, stats.mean(*a.1));
                    let db = euclidean(&z, stats.mean(*b.1));
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            want.push(left.remove(pos));
        }
        assert_eq!(nearest_class_means(&z, &stats, 5).unwrap(), want);
    }

    #[test]
    fn calibration_arithmetic() {
        let stats = stats_of(&[&[0.0, 0.0], &[3.0, 0.0]], vec![Matrix::identity(2), scaled_identity(2, 3.0)]);
        let g = calibrated_distribution(&[0.0, 3.0], &[0, 1], &stats, 0.0, AlphaMode::AllEntries, 1, 9).unwrap();
        assert_eq!(g.mean, vec![1.0, 1.0]);
        assert_eq!(g.covariance, scaled_identity(2, 2.0));
        assert_eq!((g.label, g.source_index), (1, 9));

        let g = calibrated_distribution(&[0.0, 3.0], &[0, 1], &stats, 0.2, AlphaMode::AllEntries, 1, 9).unwrap();
        assert_eq!(g.covariance.as_slice(), &[2.2, 0.2, 0.2, 2.2]);
        let g = calibrated_distribution(&[0.0, 3.0], &[0, 1], &stats, 0.2, AlphaMode::Diagonal, 1, 9).unwrap();
        assert_eq!(g.covariance.as_slice(), &[2.2, 0.0, 0.0, 2.2]);
        assert!(calibrated_distribution(&[0.0, 3.0], &[], &stats, 0.0, AlphaMode::AllEntries, 1, 9).is_err());
    }

    #[test]
    fn quota_examples() {
        let plan = generation_quotas(&[500, 5], 500, 1).unwrap();
        assert!(plan.per_class[0].is_empty());
        assert_eq!(plan.per_class[1].len(), 5);
        assert!(plan.per_class[1].iter().all(|&(_, n)| n == 99));

        // hand count: G = 7, q = ceil(10/3 - 1) = 3 -> 3 + 3 + 1
        let plan = generation_quotas(&[10, 3], 10, 2).unwrap();
        let mut sizes: Vec<usize> = plan.per_class[1].iter().map(|&(_, n)| n).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 3, 3]);
        assert!(generation_quotas(&[10, 3], 9, 0).is_err());
    }

    #[test]
    fn table_presets() {
        let c = GenerationConfig::cifar100_lt(50).unwrap();
        assert_eq!((c.lambda.unwrap().value(), c.neighbors, c.alpha), (0.9, 2, 0.2));
        let c = GenerationConfig::cifar100_lt(100).unwrap();
        assert_eq!(c, GenerationConfig::default());
        assert!(GenerationConfig::cifar100_lt(20).is_none());
        assert_eq!(GenerationConfig::mini_imagenet_lt().alpha, 0.1);
    }

    fn two_class(head: usize, tail: usize) -> FeatureDataset {
        let n = head + tail;
        let x = Matrix::from_fn(n, 2, |i, j| {
            if i < head {
                1.0 + 0.01 * (i * (j + 1)) as f64
            } else {
                -1.0 - 0.1 * (i * (j + 2) % 7) as f64
            }
        });
        let labels = (0..n).map(|i| u32::from(i >= head)).collect();
        FeatureDataset::new(x, labels, 2).unwrap()
    }

    #[test]
    fn balanced_input_generates_nothing() {
        let ds = two_class(6, 6);
        let g = generate_balanced(&ds, &GenerationConfig { neighbors: 1, ..Default::default() }).unwrap();
        assert!(g.generated.is_empty());
        assert_eq!(g.report.generated_counts, vec![0, 0]);
    }

    #[test]
    fn fifty_five_bookkeeping() {
        let ds = two_class(50, 5);
        let g = generate_balanced(&ds, &GenerationConfig { neighbors: 2, ..Default::default() }).unwrap();
        assert_eq!(g.generated.len(), 45);
        assert!(g.generated.labels().iter().all(|&l| l == 1));
        assert!(g.generated.synthetic().iter().all(|&s| s));
        assert_eq!(g.report.neighbor_histogram[1].iter().sum::<usize>(), 2 * 5);
    }

    #[test]
    fn config_errors() {
        let ds = two_class(5, 2);
        assert!(generate_balanced(&ds, &GenerationConfig { neighbors: 3, ..Default::default() }).is_err());
        assert!(generate_balanced(&ds, &GenerationConfig { neighbors: 0, ..Default::default() }).is_err());
        let cfg = GenerationConfig { neighbors: 1, target_count: Some(4), ..Default::default() };
        assert!(generate_balanced(&ds, &cfg).is_err());
        let cfg = GenerationConfig { neighbors: 1, alpha: -0.1, ..Default::default() };
        assert!(generate_balanced(&ds, &cfg).is_err());
        let empty_class = FeatureDataset::new(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0], 2).unwrap();
        assert!(generate_balanced(&empty_class, &GenerationConfig { neighbors: 1, ..Default::default() }).is_err());
        // fractional power of the negative tail rows
        let cfg = GenerationConfig { neighbors: 1, lambda: Some(TukeyParam::new(0.9).unwrap()), ..Default::default() };
        assert!(matches!(generate_balanced(&ds, &cfg), Err(Error::Domain { .. })));
    }

    #[test]
    fn normalized_generation_yields_unit_rows() {
        let ds = two_class(20, 3);
        let cfg = GenerationConfig { neighbors: 2, normalize: true, alpha: 0.05, ..Default::default() };
        let g = generate_balanced(&ds, &cfg).unwrap();
        for r in g.generated.features().iter_rows() {
            assert!((crate::matrix::norm(r) - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn quotas_sum_to_deficit(counts in prop::collection::vec(1usize..300, 1..12), extra in 0usize..50, seed in any::<u64>()) {
            let target = counts.iter().copied().max().unwrap() + extra;
            let plan = generation_quotas(&counts, target, seed).unwrap();
            for (k, &n) in counts.iter().enumerate() {
                prop_assert_eq!(plan.class_total(k), target - n);
                let mut seen: Vec<usize> = plan.per_class[k].iter().map(|p| p.0).collect();
                prop_assert!(seen.iter().all(|&i| i < n));
                seen.sort();
                seen.dedup();
                prop_assert_eq!(seen.len(), plan.per_class[k].len());
                prop_assert!(plan.per_class[k].iter().all(|&(_, q)| q >= 1));
            }
        }

        #[test]
        fn calibrated_moments_reconstruct(
            seed in any::<u64>(),
            alpha in 0.0f64..1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (k, d, m) = (5, 3, 3);
            let means = Matrix::from_fn(k, d, |_, _| rng.random_range(-2.0..2.0));
            let covs: Vec<Matrix> = (0..k).map(|_| {
                let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                a.matmul(&a.transpose()).unwrap()
            }).collect();
            let stats = ClassStats { means, covariances: covs, counts: vec![3; k] };
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let nb = nearest_class_means(&z, &stats, m).unwrap();
            let g = calibrated_distribution(&z, &nb, &stats, alpha, AlphaMode::AllEntries, 0, 0).unwrap();
            // equal barycentric weights 1/(M+1)
            for (j, zj) in z.iter().enumerate() {
                let want = (nb.iter().map(|&c| stats.mean(c)[j]).sum::<f64>() + zj) / (m + 1) as f64;
                prop_assert!((g.mean[j] - want).abs() < 1e-12);
            }
            for i in 0..d {
                for j in 0..d {
                    let avg = nb.iter().map(|&c| stats.covariances[c][(i, j)]).sum::<f64>() / m as f64;
                    prop_assert!((g.covariance[(i, j)] - alpha - avg).abs() < 1e-12);
                }
            }
        }
    }
}
