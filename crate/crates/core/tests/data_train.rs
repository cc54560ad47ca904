mod common;

use std::fs;

use prkan::data::{load_splits, parse_idx_images, parse_idx_labels, BatchPlan, ImageSet, PIXELS};
use prkan::layers::Dataset;
use prkan::train::{read_csv, run_experiment, train_run, Metrics, Stat, TrainConfig};
use prkan::{Error, ModelSpec, Variant};

fn small_config(variant: Variant, epochs: usize) -> TrainConfig {
    // recommended norm placement; attn at position 1 barely moves in a few dozen steps
    let spec = ModelSpec::new(variant).with_structure(vec![PIXELS, 12, 10]);
    let mut cfg = TrainConfig::standard(Dataset::Mnist, spec);
    cfg.epochs = epochs;
    cfg.runs = 2;
    cfg.batch_size = 32;
    cfg
}

#[test]
fn idx_parsing_errors_are_distinct() {
    let p = std::path::Path::new("x");
    let (pix, labels) = common::banded(3, 0);
    let good = common::idx_images(&pix, 3);
    assert_eq!(parse_idx_images(p, &good).unwrap().count, 3);

    let mut bad = good.clone();
    bad[3] = 0x01;
    assert!(matches!(parse_idx_images(p, &bad), Err(Error::BadMagic { .. })));
    assert!(matches!(parse_idx_images(p, &good[..good.len() - 1]), Err(Error::Truncated { .. })));
    assert!(matches!(parse_idx_images(p, &good[..6]), Err(Error::Truncated { .. })));
    assert!(matches!(parse_idx_labels(p, &good), Err(Error::BadMagic { .. })));
    assert_eq!(parse_idx_labels(p, &common::idx_labels(&labels)).unwrap(), labels);
}

#[test]
fn pixels_are_scaled_to_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path(), 20, 10);
    let s = load_splits(dir.path()).unwrap();
    assert_eq!((s.train.len(), s.val.len()), (20, 10));
    assert!(s.train.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(s.train.pixels().contains(&(200.0 / 255.0)));
}

#[test]
fn mismatched_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path(), 20, 10);
    let (_, labels) = common::banded(19, 0);
    fs::write(dir.path().join("train-labels-idx1-ubyte"), common::idx_labels(&labels)).unwrap();
    assert!(load_splits(dir.path()).is_err());
    assert!(ImageSet::from_scaled(vec![0.0; PIXELS], vec![10]).is_err());
}

#[test]
fn batch_plan_covers_every_index_once() {
    for epoch in 0..3 {
        let plan = BatchPlan { seed: 4, batch_size: 64, shuffle: true, epoch };
        let batches = plan.batches(60_000).unwrap();
        assert_eq!(batches.len(), 938);
        assert_eq!(batches.last().unwrap().len(), 32);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert!(all.iter().enumerate().all(|(i, &v)| i == v));
    }
    let a = BatchPlan { seed: 4, batch_size: 8, shuffle: true, epoch: 0 }.order(100);
    let b = BatchPlan { seed: 4, batch_size: 8, shuffle: true, epoch: 1 }.order(100);
    assert_ne!(a, b);
}

#[test]
fn macro_f1_matches_hand_count() {
    // class 0: tp 2 fp 1 fn 0; class 1: tp 1 fp 0 fn 1
    let m = Metrics::from_predictions(&[0, 0, 1, 0], &[0, 0, 1, 1], 2).unwrap();
    assert!((m.accuracy - 75.0).abs() < 1e-12);
    let f0 = 2.0 * 2.0 / (2.0 * 2.0 + 1.0);
    let f1 = 2.0 * 1.0 / (2.0 * 1.0 + 1.0);
    assert!((m.macro_f1 - 50.0 * (f0 + f1)).abs() < 1e-12);
}

#[test]
fn population_std() {
    let s = Stat::of(&[1.0, 3.0]);
    assert_eq!((s.mean, s.std), (2.0, 1.0));
    assert_eq!(Stat::of(&[5.0]).std, 0.0);
}

#[test]
fn training_is_reproducible_and_learns() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path(), 320, 100);
    let data = load_splits(dir.path()).unwrap();
    let cfg = small_config(Variant::Attn, 3);
    let quiet = |_: &prkan::train::EpochRecord| {};
    let (_, a) = train_run(&cfg, &data, 7, &quiet).unwrap();
    let (_, b) = train_run(&cfg, &data, 7, &quiet).unwrap();
    assert_eq!(a.train_loss, b.train_loss);
    assert_eq!(a.val_acc(), b.val_acc());
    let (_, c) = train_run(&cfg, &data, 8, &quiet).unwrap();
    assert_ne!(a.train_loss, c.train_loss);
    assert!(a.val_acc() > 50.0, "banded classes should be easy, got {}", a.val_acc());
    assert!(a.train_loss.last() < a.train_loss.first());
}

#[test]
fn experiment_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path(), 96, 40);
    let data = load_splits(dir.path()).unwrap();
    let mut cfg = small_config(Variant::Base, 2);
    cfg.parallel = true;
    let r = run_experiment(&cfg, &data, &|_| {}).unwrap();
    assert_eq!(r.runs.len(), 2);
    assert_eq!(r.runs[1].seed, cfg.seed + 1);

    let csv = dir.path().join("out.csv");
    r.write_csv(&csv).unwrap();
    assert!(fs::read_to_string(&csv).unwrap().starts_with("# config: {"));
    let back = read_csv(&csv).unwrap();
    let flat: Vec<_> = r.runs.iter().flat_map(|run| run.epochs.clone()).collect();
    assert_eq!(back, flat);

    let json = dir.path().join("out.json");
    r.write_json(&json).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["config"]["epochs"], 2);
}

#[test]
fn zero_epochs_evaluates_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path(), 40, 20);
    let data = load_splits(dir.path()).unwrap();
    let (_, r) = train_run(&small_config(Variant::Fwv, 0), &data, 0, &|_| {}).unwrap();
    assert!(r.train_loss.is_empty());
    assert!((0.0..=100.0).contains(&r.val_acc()));
}
