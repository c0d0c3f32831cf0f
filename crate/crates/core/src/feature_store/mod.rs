//! Labeled feature datasets and everything needed to get them on and off disk.

mod csv_import;
mod longtail;
mod synth;
mod tcfb;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use csv_import::{read_csv, LabelMap};
pub use longtail::{class_profile, make_longtail_counts, subsample_longtail, ClassProfile, Rounding};
pub use synth::{synth_gaussian_dataset, SyntheticWorldSpec};
pub use tcfb::{read_feature_file, write_feature_file, TCFB_HEADER_LEN, TCFB_MAGIC, TCFB_VERSION};

/// An N x D feature matrix with one class label per row.
///
/// Rows may be marked synthetic; the flag survives a TCFB round trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    features: Matrix,
    labels: Vec<u32>,
    num_classes: usize,
    synthetic: Vec<bool>,
}

impl FeatureDataset {
    pub fn new(features: Matrix, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        let synthetic = vec![false; labels.len()];
        Self::with_synthetic(features, labels, num_classes, synthetic)
    }

    pub fn with_synthetic(
        features: Matrix,
        labels: Vec<u32>,
        num_classes: usize,
        synthetic: Vec<bool>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::validation(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if synthetic.len() != labels.len() {
            return Err(Error::validation("synthetic flag count differs from row count"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(Error::validation(format!("label {l} at row {i} is outside [0, {num_classes})")));
        }
        if let Some(pos) = features.as_slice().iter().position(|v| !v.is_finite()) {
            let cols = features.cols().max(1);
            return Err(Error::validation(format!("non-finite feature at row {}, column {}", pos / cols, pos % cols)));
        }
        Ok(FeatureDataset { features, labels, num_classes, synthetic })
    }

    /// A dataset with no rows.
    pub fn empty(dim: usize, num_classes: usize) -> Self {
        FeatureDataset { features: Matrix::zeros(0, dim), labels: Vec::new(), num_classes, synthetic: Vec::new() }
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn synthetic(&self) -> &[bool] {
        &self.synthetic
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of rows per class, length K.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Row indices grouped by class, each group ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l as usize].push(i);
        }
        groups
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> FeatureDataset {
        FeatureDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            synthetic: idx.iter().map(|&i| self.synthetic[i]).collect(),
        }
    }

    /// Same labels and flags, new feature values.
    pub fn with_features(&self, features: Matrix) -> Result<FeatureDataset> {
        Self::with_synthetic(features, self.labels.clone(), self.num_classes, self.synthetic.clone())
    }

    /// Marks every row as synthetic.
    pub fn into_synthetic(mut self) -> FeatureDataset {
        self.synthetic.iter_mut().for_each(|s| *s = true);
        self
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FeatureDataset) -> Result<FeatureDataset> {
        if self.num_classes != other.num_classes {
            return Err(Error::validation(format!(
                "class counts differ: {} vs {}",
                self.num_classes, other.num_classes
            )));
        }
        if !self.is_empty() && !other.is_empty() && self.dim() != other.dim() {
            return Err(Error::validation(format!("feature dimensions differ: {} vs {}", self.dim(), other.dim())));
        }
        let features = self.features.vstack(&other.features)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut synthetic = self.synthetic.clone();
        synthetic.extend_from_slice(&other.synthetic);
        Ok(FeatureDataset { features, labels, num_classes: self.num_classes, synthetic })
    }

    /// Errors if any class has no rows. The calibration pipeline needs every class populated.
    pub fn require_all_classes(&self) -> Result<()> {
        let counts = self.class_counts();
        let empty: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] == 0).collect();
        if empty.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(format!("classes with no samples: {empty:?}")))
        }
    }
}
