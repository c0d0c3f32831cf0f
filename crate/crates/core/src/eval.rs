//! Accuracy breakdowns, neighbor-frequency reports and PCA projections.

use std::path::Path;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{nearest_class_means, prepare_features, GenerationConfig};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::feature_store::{ClassProfile, FeatureDataset};
use crate::matrix::Matrix;
use crate::transform::ClassStats;

/// Training-count cut-offs for the Many / Mid / Few groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitThresholds {
    /// Many iff `N_k > many_min`.
    pub many_min: usize,
    /// Few iff `N_k < few_max`.
    pub few_max: usize,
}

impl Default for SplitThresholds {
    fn default() -> Self {
        SplitThresholds { many_min: 100, few_max: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Many,
    Mid,
    Few,
}

impl SplitThresholds {
    pub fn group_of(&self, train_count: usize) -> Group {
        if train_count > self.many_min {
            Group::Many
        } else if train_count < self.few_max {
            Group::Few
        } else {
            Group::Mid
        }
    }
}

/// Accuracy of a classifier on a labeled evaluation set. Groups or classes
/// without evaluation samples report `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub many_accuracy: Option<f64>,
    pub mid_accuracy: Option<f64>,
    pub few_accuracy: Option<f64>,
    /// Evaluation samples per group, in Many, Mid, Few order.
    pub group_samples: [usize; 3],
    pub split_thresholds: SplitThresholds,
    /// The cut-offs are a library convention, not values taken from any benchmark definition.
    pub thresholds_note: String,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Scores `classifier` on `val`, whose features must already be in the classifier's space.
pub fn evaluate(
    classifier: &Classifier,
    val: &FeatureDataset,
    train_profile: &ClassProfile,
    thresholds: SplitThresholds,
) -> Result<Metrics> {
    let k = classifier.num_classes();
    if val.num_classes() != k || train_profile.counts.len() != k {
        return Err(Error::validation(format!(
            "label spaces differ: classifier {k}, evaluation {}, training profile {}",
            val.num_classes(),
            train_profile.counts.len()
        )));
    }
    if val.is_empty() {
        return Err(Error::validation("evaluation set is empty"));
    }
    if val.dim() != classifier.dim() {
        return Err(Error::validation(format!(
            "evaluation features have {} columns, classifier expects {}",
            val.dim(),
            classifier.dim()
        )));
    }
    let n = val.len();
    let chunk = 256;
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let predictions: Vec<Vec<u32>> = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + chunk).min(n)).collect();
            classifier.predict(&val.features().select_rows(&idx))
        })
        .collect::<Result<_>>()?;

    let mut seen = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for (&p, &l) in predictions.iter().flatten().zip(val.labels()) {
        seen[l as usize] += 1;
        correct[l as usize] += usize::from(p == l);
    }
    let mut group_seen = [0usize; 3];
    let mut group_correct = [0usize; 3];
    for c in 0..k {
        let g = thresholds.group_of(train_profile.counts[c]) as usize;
        group_seen[g] += seen[c];
        group_correct[g] += correct[c];
    }
    Ok(Metrics {
        overall_accuracy: correct.iter().sum::<usize>() as f64 / n as f64,
        per_class_accuracy: (0..k).map(|c| ratio(correct[c], seen[c])).collect(),
        many_accuracy: ratio(group_correct[0], group_seen[0]),
        mid_accuracy: ratio(group_correct[1], group_seen[1]),
        few_accuracy: ratio(group_correct[2], group_seen[2]),
        group_samples: group_seen,
        split_thresholds: thresholds,
        thresholds_note:
            "Many/Mid/Few cut-offs are a configurable convention (default: many if N_k > 100, few if N_k < 20)".into(),
    })
}

/// Neighbor usage for one tail class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailNeighbors {
    pub class: usize,
    pub train_count: usize,
    /// `(class, times chosen)` for every other class chosen at least once, most frequent first.
    pub ranked: Vec<(usize, usize)>,
    /// Times each class id was chosen, own class included.
    pub raw_counts: Vec<usize>,
    pub own_selections: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub neighbors: usize,
    pub classes: Vec<TailNeighbors>,
}

/// For the `bottom_n` smallest classes, counts which classes the calibration
/// step picks as neighbors across all of that class's instances.
///
/// `stats` must describe `dataset` after `prepare_features(dataset, config)`.
pub fn nn_report(
    stats: &ClassStats,
    dataset: &FeatureDataset,
    config: &GenerationConfig,
    bottom_n: usize,
) -> Result<NeighborReport> {
    let k = dataset.num_classes();
    config.validate(k)?;
    if stats.num_classes() != k {
        return Err(Error::validation(format!("statistics cover {} classes, dataset has {k}", stats.num_classes())));
    }
    let prepared = prepare_features(dataset.features(), config)?;
    let counts = dataset.class_counts();
    let groups = dataset.class_indices();
    let mut order: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    order.sort_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
    order.truncate(bottom_n);

    let classes = order
        .par_iter()
        .map(|&class| {
            let mut raw_counts = vec![0usize; k];
            for &row in &groups[class] {
                for c in nearest_class_means(prepared.row(row), stats, config.neighbors)? {
                    raw_counts[c] += 1;
                }
            }
            let mut ranked: Vec<(usize, usize)> =
                raw_counts.iter().enumerate().filter(|&(c, &n)| c != class && n > 0).map(|(c, &n)| (c, n)).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            Ok(TailNeighbors {
                class,
                train_count: counts[class],
                ranked,
                own_selections: raw_counts[class],
                raw_counts,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NeighborReport { neighbors: config.neighbors, classes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// n x dims.
    pub coords: Matrix,
    /// Share of total variance per kept component, descending.
    pub explained_ratio: Vec<f64>,
    /// dims x D, unit rows.
    pub components: Matrix,
    pub mean: Vec<f64>,
}

/// Centered PCA onto the top `dims` principal axes.
///
/// Each axis is signed so its largest-magnitude loading is positive. When the
/// data has fewer than `dims` nonzero-variance directions, fewer axes are returned.
pub fn pca_project(features: &Matrix, dims: usize) -> Result<Projection> {
    let (n, d) = (features.rows(), features.cols());
    if dims == 0 || n < dims {
        return Err(Error::validation(format!("cannot project {n} rows onto {dims} components")));
    }
    let mut mean = vec![0.0; d];
    for r in features.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = Matrix::from_fn(n, d, |i, j| features[(i, j)] - mean[j]);
    let mut cov = centered.transpose().matmul(&centered)?;
    let denom = (n.max(2) - 1) as f64;
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= denom);

    let eig = SymmetricEigen::new(cov.to_nalgebra());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> =
        order.into_iter().take(dims.min(d)).filter(|&i| top > 0.0 && eig.eigenvalues[i] > 1e-12 * top).collect();
    if kept.len() < dims {
        log::warn!("data has rank {} < {dims}; returning {} components", kept.len(), kept.len());
    }

    let mut components = Matrix::zeros(kept.len(), d);
    for (r, &i) in kept.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = (0..d).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[(r, j)] = sign * v[j];
        }
    }
    let coords = centered.matmul(&components.transpose())?;
    let explained_ratio = kept.iter().map(|&i| eig.eigenvalues[i] / total).collect();
    Ok(Projection { coords, explained_ratio, components, mean })
}

/// Writes `x,y,label,is_generated` rows (or `pc0,pc1,...` for other widths).
pub fn write_projection_csv(
    path: impl AsRef<Path>,
    projection: &Projection,
    labels: &[u32],
    synthetic: &[bool],
) -> Result<()> {
    let n = projection.coords.rows();
    if labels.len() != n || synthetic.len() != n {
        return Err(Error::validation("labels and flags must match the projected rows"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let k = projection.coords.cols();
    let mut header: Vec<String> =
        if k == 2 { vec!["x".into(), "y".into()] } else { (0..k).map(|i| format!("pc{i}")).collect() };
    header.extend(["label".into(), "is_generated".into()]);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(io)?;
    for i in 0..n {
        let mut rec: Vec<String> = projection.coords.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(labels[i].to_string());
        rec.push(u8::from(synthetic[i]).to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
