use std::path::Path;

use serde::{Deserialize, Serialize};
use tailcalib::calibrate::{prepare_features, AlphaMode, StatsSpace};
use tailcalib::classifier::{provider_for, train_classifier, LrSchedule};
use tailcalib::eval::{evaluate, nn_report, pca_project, write_projection_csv, SplitThresholds};
use tailcalib::feature_store::{
    class_profile, make_longtail_counts, read_csv, read_feature_file, subsample_longtail, write_feature_file, Rounding,
};
use tailcalib::transform::{class_statistics, PowerMode};
use tailcalib::{
    Calibrator, ClassProfile, Classifier, FeatureDataset, GenerationConfig, HeadKind, Matrix, TrainConfig, TrainMode,
    TukeyParam,
};

use crate::error::CliError;
use crate::output::OutputDir;
use crate::settings::Settings;

/// Stored next to a checkpoint so `eval` can rebuild the feature space and group split.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelCard {
    pub mode: String,
    pub head: HeadKind,
    pub num_classes: usize,
    pub dim: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub final_gamma: f64,
    pub train_counts: Vec<usize>,
    /// Feature preparation evaluation data must go through, if any.
    pub preprocess: Option<GenerationConfig>,
}

pub const MODEL_CARD: &str = "model.json";
pub const FINAL_CHECKPOINT: &str = "model.tcck";
pub const BEST_CHECKPOINT: &str = "best.tcck";

fn read_features(s: &mut Settings, key: &str) -> Result<FeatureDataset, CliError> {
    let path = s.path(key)?;
    read_tcfb(&path)
}

fn read_tcfb(path: &Path) -> Result<FeatureDataset, CliError> {
    read_feature_file(path).map_err(|e| match e {
        tailcalib::Error::Io(io) => CliError::Io(format!("cannot read {}: {io}", path.display())),
        other => other.into(),
    })
}

fn write_tcfb(out: &mut OutputDir, name: &str, ds: &FeatureDataset) -> Result<(), CliError> {
    let path = out.path(name);
    write_feature_file(ds, &path)?;
    Ok(())
}

fn generation_config(s: &mut Settings, default_normalize: bool, seed: u64) -> Result<GenerationConfig, CliError> {
    let defaults = GenerationConfig::default();
    let tukey: String = s.get("tukey", "1.0".to_string())?;
    let lambda = match tukey.as_str() {
        "none" => None,
        v => Some(TukeyParam::new(
            v.parse().map_err(|e| CliError::Usage(format!("invalid value {v:?} for tukey: {e}")))?,
        )?),
    };
    let power_mode = match s.choice("power-mode", "strict", &["strict", "signed"])? {
        "signed" => PowerMode::SignedPower,
        _ => PowerMode::Strict,
    };
    let alpha_mode = match s.choice("alpha-mode", "all", &["all", "diagonal"])? {
        "diagonal" => AlphaMode::Diagonal,
        _ => AlphaMode::AllEntries,
    };
    let stats_space = match s.choice("stats-space", "transformed", &["transformed", "raw"])? {
        "raw" => StatsSpace::Raw,
        _ => StatsSpace::Transformed,
    };
    Ok(GenerationConfig {
        lambda,
        power_mode,
        neighbors: s.get("neighbors", defaults.neighbors)?,
        alpha: s.get("alpha", defaults.alpha)?,
        alpha_mode,
        normalize: s.flag("normalize", default_normalize)?,
        stats_space,
        seed,
        target_count: s.optional("target")?,
        max_jitter: s.get("max-jitter", defaults.max_jitter)?,
    })
}

pub fn subsample(s: &mut Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let ds = read_features(s, "input")?;
    let imbalance: f64 = s.get("imbalance", 100.0)?;
    let rounding: Rounding = s.get::<String>("rounding", "half-up".into())?.parse()?;
    let seed: u64 = s.get("seed", 0)?;
    let largest = ds.class_counts().into_iter().max().unwrap_or(0);
    let n_head: usize = s.get("n-head", largest)?;
    let counts = make_longtail_counts(n_head, ds.num_classes(), imbalance, rounding)?;
    let lt = subsample_longtail(&ds, &counts, seed)?;
    write_tcfb(out, "subsampled.tcfb", &lt)?;
    out.write_json("profile.json", &class_profile(&lt)?)?;
    log::info!("kept {} of {} rows", lt.len(), ds.len());
    Ok(())
}

pub fn generate(s: &mut Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let ds = read_features(s, "input")?;
    let seed: u64 = s.get("seed", 0)?;
    let cfg = generation_config(s, false, seed)?;
    let calibrator = Calibrator::new(&ds, &cfg)?;
    let gen = calibrator.generate(seed)?;
    write_tcfb(out, "generated.tcfb", &gen.generated)?;
    write_tcfb(out, "balanced.tcfb", &calibrator.prepared().concat(&gen.generated)?)?;
    out.write_json("generation_report.json", &gen.report)?;
    let path = out.path("class_stats.bin");
    calibrator.stats().write_binary(&path)?;
    log::info!("generated {} rows", gen.generated.len());
    Ok(())
}

pub fn train(s: &mut Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let train = read_features(s, "input")?;
    let val = match s.optional_path("val") {
        Some(path) => read_tcfb(&path)?,
        None => train.clone(),
    };
    let seed: u64 = s.get("seed", 0)?;
    let head: HeadKind = s.get::<String>("classifier", "cosine".into())?.parse()?;
    let defaults = TrainConfig::default();
    let mode_name = s.choice("mode", "plain", &["plain", "tailcalib", "tailcalibx", "oversample", "noise", "mixup"])?;
    let mut preprocess = None;
    let mode = match mode_name {
        "tailcalib" | "tailcalibx" => {
            let gen = generation_config(s, head == HeadKind::Cosine, seed)?;
            preprocess = Some(gen.clone());
            if mode_name == "tailcalib" {
                TrainMode::TailCalib(gen)
            } else {
                TrainMode::TailCalibX(gen)
            }
        }
        "oversample" => TrainMode::Oversample,
        "noise" => TrainMode::GaussianNoise { noise_scale: s.get("noise-scale", 0.01)? },
        "mixup" => TrainMode::Mixup { alpha: s.get("mixup-alpha", 0.01)? },
        _ => TrainMode::Plain,
    };
    let lr_schedule = match s.choice("lr-schedule", "constant", &["constant", "cosine"])? {
        "cosine" => LrSchedule::CosineDecay,
        _ => LrSchedule::Constant,
    };
    let cfg = TrainConfig {
        epochs: s.get("epochs", defaults.epochs)?,
        batch_size: s.get("batch-size", defaults.batch_size)?,
        learning_rate: s.get("lr", defaults.learning_rate)?,
        lr_schedule,
        momentum: s.get("momentum", defaults.momentum)?,
        weight_decay: s.get("weight-decay", defaults.weight_decay)?,
        seed,
        head,
        gamma_init: s.get("gamma", defaults.gamma_init)?,
        mode,
    };
    cfg.validate()?;
    let init = match s.optional_path("warm-start") {
        Some(path) => Some(Classifier::load(&path).map_err(|e| match e {
            tailcalib::Error::Io(io) => CliError::Io(format!("cannot read {}: {io}", path.display())),
            other => other.into(),
        })?),
        None => None,
    };

    let mut provider = provider_for(&train, &cfg.mode, seed)?;
    let outcome = train_classifier(provider.as_mut(), &val, &cfg, init)?;
    out.write(FINAL_CHECKPOINT, outcome.classifier.to_bytes())?;
    out.write(BEST_CHECKPOINT, outcome.best.to_bytes())?;
    out.write("train_log.jsonl", outcome.log_jsonl()?)?;
    let card = ModelCard {
        mode: cfg.mode.name().to_string(),
        head,
        num_classes: outcome.classifier.num_classes(),
        dim: outcome.classifier.dim(),
        epochs: cfg.epochs,
        best_epoch: outcome.best_epoch,
        final_gamma: outcome.classifier.gamma(),
        train_counts: train.class_counts(),
        preprocess,
    };
    out.write_json(MODEL_CARD, &card)?;
    if let Some(last) = outcome.log.last() {
        log::info!("final epoch loss {:.4}, val accuracy {:.4}", last.train_loss, last.val_accuracy);
    }
    Ok(())
}

pub fn eval(s: &mut Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let model_dir = s.path("model")?;
    let val = read_features(s, "input")?;
    let which = s.choice("checkpoint", "final", &["final", "best"])?;
    let defaults = SplitThresholds::default();
    let thresholds = SplitThresholds {
        many_min: s.get("many-min", defaults.many_min)?,
        few_max: s.get("few-max", defaults.few_max)?,
    };
    let card_path = model_dir.join(MODEL_CARD);
    let card_text = std::fs::read_to_string(&card_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", card_path.display())))?;
    let card: ModelCard = serde_json::from_str(&card_text)?;
    let ckpt_path = model_dir.join(if which == "best" { BEST_CHECKPOINT } else { FINAL_CHECKPOINT });
    let bytes =
        std::fs::read(&ckpt_path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", ckpt_path.display())))?;
    let classifier = Classifier::from_bytes(&bytes)?;
    let features = match &card.preprocess {
        Some(cfg) => prepare_features(val.features(), cfg)?,
        None => val.features().clone(),
    };
    let profile = ClassProfile::from_counts(card.train_counts.clone())?;
    let metrics = evaluate(&classifier, &val.with_features(features)?, &profile, thresholds)?;
    out.write_json("metrics.json", &metrics)?;
    log::info!("overall accuracy {:.4}", metrics.overall_accuracy);
    Ok(())
}

pub fn nn_report_cmd(s: &mut Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let ds = read_features(s, "input")?;
    let bottom: usize = s.get("bottom", 15)?;
    let cfg = generation_config(s, false, 0)?;
    let prepared = ds.with_features(prepare_features(ds.features(), &cfg)?)?;
    let stats = class_statistics(&prepared)?;
    out.write_json("nn_report.json", &nn_report(&stats, &ds, &cfg, bottom)?)?;
    Ok(())
}

#[derive(Serialize)]
struct ProjectionSummary<'a> {
    explained_ratio: &'a [f64],
    components: &'a Matrix,
    mean: &'a [f64],
}

pub fn project(s: &mut Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let mut ds = read_features(s, "input")?;
    if let Some(path) = s.optional_path("generated") {
        ds = ds.concat(&read_tcfb(&path)?)?;
    }
    let dims: usize = s.get("dims", 2)?;
    let proj = pca_project(ds.features(), dims)?;
    let path = out.path("projection.csv");
    write_projection_csv(&path, &proj, ds.labels(), ds.synthetic())?;
    out.write_json(
        "projection.json",
        &ProjectionSummary { explained_ratio: &proj.explained_ratio, components: &proj.components, mean: &proj.mean },
    )?;
    Ok(())
}

pub fn import_csv(s: &mut Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let path = s.path("input")?;
    let (ds, labels) = read_csv(&path).map_err(|e| match e {
        tailcalib::Error::Io(io) => CliError::Io(format!("cannot read {}: {io}", path.display())),
        other => other.into(),
    })?;
    write_tcfb(out, "features.tcfb", &ds)?;
    out.write_json("label_map.json", &labels)?;
    Ok(())
}
