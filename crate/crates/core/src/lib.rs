//! Feature-space rebalancing for long-tail classification.
//!
//! The crate works on precomputed embeddings. It estimates per-class Gaussian
//! statistics, builds an instance-specific calibrated Gaussian from the
//! nearest class centroids, samples synthetic features until every class has
//! the same number of rows, and retrains a decoupled linear or cosine
//! classifier on the balanced set.
//!
//! Module map:
//!
//! - [`feature_store`]: datasets, the TCFB file format, long-tail profiles.
//! - [`transform`]: Tukey power transform, row normalization, class statistics.
//! - [`calibrate`]: neighbor selection, calibrated distributions, quotas and
//!   the end-to-end [`calibrate::generate_balanced`] pipeline.
//! - [`sampler`]: jittered Cholesky and multivariate normal draws.
//! - [`classifier`]: linear and cosine heads, softmax cross-entropy, SGD.
//! - [`baselines`]: oversampling, Gaussian-noise padding, feature mixup.
//! - [`eval`]: accuracy breakdowns, neighbor reports, PCA projections.

pub mod baselines;
pub mod calibrate;
pub mod classifier;
mod error;
pub mod eval;
pub mod feature_store;
mod matrix;
pub mod rng;
pub mod sampler;
pub mod transform;

pub use calibrate::{generate_balanced, Calibrator, GenerationConfig};
pub use classifier::{Classifier, HeadKind, TrainConfig, TrainMode};
pub use error::{Error, Result};
pub use feature_store::{ClassProfile, FeatureDataset};
pub use matrix::Matrix;
pub use transform::{ClassStats, TukeyParam};
