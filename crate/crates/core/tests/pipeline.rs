//! End-to-end runs through the public API, persisting every intermediate artifact.

use tailcalib::classifier::{provider_for, train_classifier};
use tailcalib::eval::{evaluate, nn_report, pca_project, write_projection_csv, SplitThresholds};
use tailcalib::feature_store::{
    class_profile, make_longtail_counts, read_feature_file, subsample_longtail, synth_gaussian_dataset,
    write_feature_file, Rounding, SyntheticWorldSpec,
};
use tailcalib::transform::class_statistics;
use tailcalib::{
    generate_balanced, ClassStats, Classifier, FeatureDataset, GenerationConfig, HeadKind, Matrix, TrainConfig,
    TrainMode,
};

fn world(per_class: Vec<usize>, seed: u64) -> FeatureDataset {
    let k = per_class.len();
    let means = Matrix::from_fn(k, k, |c, j| if j == c { 1.5 } else { 0.0 });
    synth_gaussian_dataset(&SyntheticWorldSpec::isotropic(means, 0.15, per_class, seed)).unwrap()
}

#[test]
fn files_round_trip_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let full = world(vec![200; 8], 1);
    let counts = make_longtail_counts(200, 8, 50.0, Rounding::HalfUp).unwrap();
    let lt = subsample_longtail(&full, &counts, 2).unwrap();
    assert_eq!(lt.class_counts(), counts);

    let lt_path = dir.path().join("lt.tcfb");
    write_feature_file(&lt, &lt_path).unwrap();
    let lt = read_feature_file(&lt_path).unwrap();

    let cfg = GenerationConfig { neighbors: 2, alpha: 0.05, normalize: true, seed: 3, ..Default::default() };
    let gen = generate_balanced(&lt, &cfg).unwrap();
    let gen_path = dir.path().join("gen.tcfb");
    write_feature_file(&gen.generated, &gen_path).unwrap();
    let reread = read_feature_file(&gen_path).unwrap();
    assert_eq!(reread.labels(), gen.generated.labels());
    assert!(reread.synthetic().iter().all(|&s| s));
    for (a, b) in reread.features().as_slice().iter().zip(gen.generated.features().as_slice()) {
        assert_eq!(*a, *b as f32 as f64);
    }

    let stats = class_statistics(&lt).unwrap();
    let stats_path = dir.path().join("stats.bin");
    stats.write_binary(&stats_path).unwrap();
    assert_eq!(ClassStats::read_binary(&stats_path).unwrap(), stats);

    let val = world(vec![50; 8], 4);
    let train_cfg = TrainConfig {
        epochs: 8,
        batch_size: 64,
        learning_rate: 0.05,
        mode: TrainMode::TailCalib(cfg.clone()),
        ..Default::default()
    };
    let mut provider = provider_for(&lt, &train_cfg.mode, 5).unwrap();
    let out = train_classifier(provider.as_mut(), &val, &train_cfg, None).unwrap();
    let ckpt = dir.path().join("model.tcck");
    out.classifier.save(&ckpt).unwrap();
    let loaded = Classifier::load(&ckpt).unwrap();
    assert_eq!(loaded, out.classifier);

    let val_prepared = val.with_features(provider.prepare_eval(val.features()).unwrap()).unwrap();
    let metrics = evaluate(&loaded, &val_prepared, &class_profile(&lt).unwrap(), SplitThresholds::default()).unwrap();
    assert!(metrics.overall_accuracy > 0.9, "{metrics:?}");

    let prepared_stats = class_statistics(&provider_prepared(&lt, &cfg)).unwrap();
    let report = nn_report(&prepared_stats, &lt, &cfg, 3).unwrap();
    assert_eq!(report.classes.len(), 3);
    assert_eq!(report.classes[0].class, 7);

    let both = provider_prepared(&lt, &cfg).concat(&gen.generated).unwrap();
    let proj = pca_project(both.features(), 2).unwrap();
    let csv = dir.path().join("proj.csv");
    write_projection_csv(&csv, &proj, both.labels(), both.synthetic()).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), both.len() + 1);
    assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), gen.generated.len());
}

fn provider_prepared(ds: &FeatureDataset, cfg: &GenerationConfig) -> FeatureDataset {
    ds.with_features(tailcalib::calibrate::prepare_features(ds.features(), cfg).unwrap()).unwrap()
}

#[test]
fn linear_and_cosine_heads_both_learn_the_balanced_world() {
    let train = world(vec![120; 6], 10);
    let val = world(vec![60; 6], 11);
    for head in [HeadKind::Linear, HeadKind::Cosine] {
        let cfg = TrainConfig { epochs: 15, learning_rate: 0.05, head, ..Default::default() };
        let mut provider = provider_for(&train, &cfg.mode, 0).unwrap();
        let out = train_classifier(provider.as_mut(), &val, &cfg, None).unwrap();
        let metrics = evaluate(&out.best, &val, &class_profile(&train).unwrap(), SplitThresholds::default()).unwrap();
        assert!(metrics.overall_accuracy > 0.95, "{head:?}: {}", metrics.overall_accuracy);
        assert_eq!(out.log.len(), 15);
    }
}

#[test]
fn regeneration_changes_samples_but_not_counts() {
    let lt = world(vec![80, 30, 9, 3], 20);
    let cfg = GenerationConfig { neighbors: 2, seed: 1, ..Default::default() };
    let a = generate_balanced(&lt, &cfg).unwrap();
    let b = generate_balanced(&lt, &GenerationConfig { seed: 2, ..cfg.clone() }).unwrap();
    let again = generate_balanced(&lt, &cfg).unwrap();
    assert_eq!(a.generated.class_counts(), b.generated.class_counts());
    assert_ne!(a.generated.features(), b.generated.features());
    assert_eq!(a.generated.features(), again.generated.features());
    assert_eq!(a.report, again.report);
}
