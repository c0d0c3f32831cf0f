use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Classifier, Gradients, HeadKind, DEFAULT_GAMMA};
use crate::baselines;
use crate::calibrate::{prepare_features, Calibrator, GenerationConfig};
use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::matrix::Matrix;
use crate::rng::{domain, StreamId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate towards zero over the run, stepped per epoch.
    CosineDecay,
}

/// What the classifier is trained on each epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrainMode {
    /// Original features with instance sampling.
    #[default]
    Plain,
    /// Original features plus one set of calibrated features generated up front.
    TailCalib(GenerationConfig),
    /// Original features plus a fresh calibrated set every epoch.
    TailCalibX(GenerationConfig),
    /// Original features padded by duplication.
    Oversample,
    /// Duplicates perturbed by isotropic Gaussian noise.
    GaussianNoise { noise_scale: f64 },
    /// Original features, each batch mixed with a shuffled copy of itself.
    Mixup { alpha: f64 },
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Plain => "plain",
            TrainMode::TailCalib(_) => "tailcalib",
            TrainMode::TailCalibX(_) => "tailcalibx",
            TrainMode::Oversample => "oversample",
            TrainMode::GaussianNoise { .. } => "noise",
            TrainMode::Mixup { .. } => "mixup",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub head: HeadKind,
    /// Initial cosine scale.
    pub gamma_init: f64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    /// Classifier retraining settings used for CIFAR-100-LT.
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.001,
            lr_schedule: LrSchedule::Constant,
            momentum: 0.9,
            weight_decay: 5e-5,
            seed: 0,
            head: HeadKind::Cosine,
            gamma_init: DEFAULT_GAMMA,
            mode: TrainMode::Plain,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::validation(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        match &self.mode {
            TrainMode::Mixup { alpha } if !(*alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::validation(format!("mixup alpha must be > 0, got {alpha}")))
            }
            TrainMode::GaussianNoise { noise_scale } if !(*noise_scale >= 0.0 && noise_scale.is_finite()) => {
                Err(Error::validation(format!("noise scale must be >= 0, got {noise_scale}")))
            }
            _ => Ok(()),
        }
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::CosineDecay => {
                let t = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Supplies the labeled features for each training epoch.
pub trait FeatureProvider {
    fn epoch_data(&mut self, epoch: usize) -> Result<&FeatureDataset>;

    /// Maps evaluation features into the space the training rows live in.
    fn prepare_eval(&self, features: &Matrix) -> Result<Matrix> {
        Ok(features.clone())
    }

    fn num_classes(&self) -> usize;

    fn dim(&self) -> usize;
}

/// The same dataset every epoch.
struct FixedProvider {
    data: FeatureDataset,
    generation: Option<GenerationConfig>,
}

impl FeatureProvider for FixedProvider {
    fn epoch_data(&mut self, _epoch: usize) -> Result<&FeatureDataset> {
        Ok(&self.data)
    }

    fn prepare_eval(&self, features: &Matrix) -> Result<Matrix> {
        match &self.generation {
            Some(cfg) => prepare_features(features, cfg),
            None => Ok(features.clone()),
        }
    }

    fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }
}

/// Regenerates the calibrated features at the start of every epoch.
struct RegeneratingProvider {
    calibrator: Calibrator,
    current: FeatureDataset,
}

impl FeatureProvider for RegeneratingProvider {
    fn epoch_data(&mut self, epoch: usize) -> Result<&FeatureDataset> {
        let seed = StreamId::new(self.calibrator.config().seed, &[domain::EPOCH, epoch as u64]).derive_seed();
        let generation = self.calibrator.generate(seed)?;
        self.current = self.calibrator.prepared().concat(&generation.generated)?;
        Ok(&self.current)
    }

    fn prepare_eval(&self, features: &Matrix) -> Result<Matrix> {
        prepare_features(features, self.calibrator.config())
    }

    fn num_classes(&self) -> usize {
        self.calibrator.prepared().num_classes()
    }

    fn dim(&self) -> usize {
        self.calibrator.prepared().dim()
    }
}

/// Builds the provider for `mode` over the training set.
///
/// Baseline padding uses `seed`; calibrated modes use the seed in their own config.
pub fn provider_for(train: &FeatureDataset, mode: &TrainMode, seed: u64) -> Result<Box<dyn FeatureProvider>> {
    let target = train.class_counts().into_iter().max().unwrap_or(0);
    let fixed =
        |data, generation| -> Result<Box<dyn FeatureProvider>> { Ok(Box::new(FixedProvider { data, generation })) };
    match mode {
        TrainMode::Plain | TrainMode::Mixup { .. } => fixed(train.clone(), None),
        TrainMode::Oversample => fixed(baselines::oversample_balance(train, target, seed)?, None),
        TrainMode::GaussianNoise { noise_scale } => {
            fixed(baselines::gaussian_noise_balance(train, target, *noise_scale, seed)?, None)
        }
        TrainMode::TailCalib(cfg) => {
            let calibrator = Calibrator::new(train, cfg)?;
            let generated = calibrator.generate(cfg.seed)?.generated;
            fixed(calibrator.prepared().concat(&generated)?, Some(cfg.clone()))
        }
        TrainMode::TailCalibX(cfg) => {
            let calibrator = Calibrator::new(train, cfg)?;
            let current = calibrator.prepared().clone();
            Ok(Box::new(RegeneratingProvider { calibrator, current }))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Sample-weighted mean batch loss.
    pub train_loss: f64,
    pub train_samples: usize,
    /// Rows seen per class this epoch.
    pub class_counts: Vec<usize>,
    pub val_accuracy: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub classifier: Classifier,
    /// Head from the epoch with the highest validation accuracy (earliest on ties).
    pub best: Classifier,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// One JSON object per epoch.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

struct Momentum {
    weights: Matrix,
    bias: Option<Vec<f64>>,
    gamma_raw: f64,
}

/// SGD with classic momentum; weight decay enters as an extra gradient term on W and b.
fn sgd_step(clf: &mut Classifier, grads: &Gradients, buf: &mut Momentum, lr: f64, momentum: f64, weight_decay: f64) {
    let update = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
        for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = momentum * *v + g + weight_decay * *p;
            *p -= lr * *v;
        }
    };
    update(clf.weights.as_mut_slice(), grads.weights.as_slice(), buf.weights.as_mut_slice());
    if let (Some(b), Some(gb), Some(vb)) = (clf.bias.as_mut(), grads.bias.as_ref(), buf.bias.as_mut()) {
        update(b, gb, vb);
    }
    if clf.head == HeadKind::Cosine {
        buf.gamma_raw = momentum * buf.gamma_raw + grads.gamma_raw;
        clf.gamma_raw -= lr * buf.gamma_raw;
    }
}

fn accuracy(clf: &Classifier, features: &Matrix, labels: &[u32]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = clf.predict(features)?;
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Mini-batch SGD over whatever `provider` yields each epoch.
///
/// `init` warm-starts from an existing head; otherwise a fresh head is seeded
/// from `config.seed`.
pub fn train_classifier(
    provider: &mut dyn FeatureProvider,
    val: &FeatureDataset,
    config: &TrainConfig,
    init: Option<Classifier>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (k, d) = (provider.num_classes(), provider.dim());
    if val.num_classes() != k {
        return Err(Error::validation(format!("validation set has {} classes, training has {k}", val.num_classes())));
    }
    if !val.is_empty() && val.dim() != d {
        return Err(Error::validation(format!("validation features have {} columns, training has {d}", val.dim())));
    }
    let mut clf = match init {
        Some(c) => {
            if c.num_classes() != k || c.dim() != d || c.head != config.head {
                return Err(Error::validation("warm-start classifier does not match the training setup"));
            }
            c
        }
        None => Classifier::init(k, d, config.head, config.gamma_init, config.seed)?,
    };
    let val_features = provider.prepare_eval(val.features())?;
    let mut buf =
        Momentum { weights: Matrix::zeros(k, d), bias: clf.bias.as_ref().map(|b| vec![0.0; b.len()]), gamma_raw: 0.0 };
    let mixup = match config.mode {
        TrainMode::Mixup { alpha } => Some(alpha),
        _ => None,
    };

    let mut log = Vec::with_capacity(config.epochs);
    let mut best = clf.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let data = provider.epoch_data(epoch)?;
        if data.dim() != d && !data.is_empty() {
            return Err(Error::validation("provider changed feature dimension"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut StreamId::new(config.seed, &[domain::SHUFFLE, epoch as u64]).rng());

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let x = data.features().select_rows(batch);
            let mut targets = Matrix::zeros(batch.len(), k);
            for (i, &r) in batch.iter().enumerate() {
                targets[(i, data.labels()[r] as usize)] = 1.0;
            }
            let (x, targets) = match mixup {
                Some(alpha) => {
                    let stream = StreamId::new(config.seed, &[domain::MIXUP, epoch as u64, b as u64]);
                    baselines::feature_mixup_batch(&x, &targets, alpha, &stream)?
                }
                None => (x, targets),
            };
            let logits = clf.logits(&x)?;
            let (loss, g) = super::softmax_ce_soft(&logits, &targets).map_err(|e| {
                Error::Numerical(format!(
                    "epoch {epoch}, batch {b}: {e}; gamma {:.4e}, |W| {:.4e}",
                    clf.gamma(),
                    clf.weights.frobenius_norm()
                ))
            })?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}, batch {b}: loss is {loss}; gamma {:.4e}, |W| {:.4e}",
                    clf.gamma(),
                    clf.weights.frobenius_norm()
                )));
            }
            loss_sum += loss * batch.len() as f64;
            let grads = clf.backward(&x, &g)?;
            sgd_step(&mut clf, &grads, &mut buf, lr, config.momentum, config.weight_decay);
        }

        let val_accuracy = accuracy(&clf, &val_features, val.labels())?;
        log.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: if data.is_empty() { 0.0 } else { loss_sum / data.len() as f64 },
            train_samples: data.len(),
            class_counts: data.class_counts(),
            val_accuracy,
            gamma: clf.gamma(),
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = clf.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome { classifier: clf, best, best_epoch, log })
}
