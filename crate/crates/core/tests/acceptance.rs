//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line before asserting.
//!
//! The MNIST criteria read the IDX files from `$PRKAN_DATA_DIR` or
//! `data/mnist` under the workspace root and fail when they are missing.
//! The full reproduction tier is ignored by default:
//!
//! ```text
//! cargo test -p prkan --test acceptance -- --ignored --nocapture
//! ```

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use prkan::audit::count_params;
use prkan::basis::{BSplineGrid, Basis, BSPLINE_RANGE};
use prkan::data::{default_dir, load_splits, ImageSet, Splits, PIXELS};
use prkan::gradcheck::{default_cases, run_suite, Suite};
use prkan::layers::{BasisKind, Dataset, NormPosition};
use prkan::nn::NormKind;
use prkan::train::{evaluate, run_experiment, train_run, ExperimentResult, TrainConfig};
use prkan::{Model, ModelSpec, Tensor, Variant};

/// Training criteria run one at a time so wall-clock timings are not shared.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn mnist(criterion: u32) -> &'static Splits {
    static DATA: OnceLock<Result<Splits, String>> = OnceLock::new();
    let dir = default_dir(Dataset::Mnist);
    match DATA.get_or_init(|| load_splits(&dir).map_err(|e| e.to_string())) {
        Ok(d) => d,
        Err(e) => {
            println!("criterion {criterion} FAIL: MNIST unavailable at {}: {e}", dir.display());
            panic!("MNIST unavailable: {e}");
        }
    }
}

fn report(criterion: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {criterion} [{name}] {}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn quiet(_: &prkan::train::EpochRecord) {}

fn mnist_config(spec: ModelSpec, epochs: usize, runs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::standard(Dataset::Mnist, spec);
    cfg.epochs = epochs;
    cfg.runs = runs;
    cfg
}

fn attn_layer_norm() -> ModelSpec {
    ModelSpec::new(Variant::Attn)
        .with_basis(BasisKind::Rbf)
        .with_norm(NormKind::Layer, NormPosition::Reduced)
}

#[test]
fn criterion_1_parameter_census() {
    let start = Instant::now();
    let expected = [
        (Variant::Attn, 52604),
        (Variant::Conv, 52604),
        (Variant::ConvPool, 52730),
        (Variant::DimSum, 52586),
        (Variant::Fwv, 52602),
        (Variant::EfficientKan, 55580),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (v, want) in expected {
        let got = count_params(&Model::build(&ModelSpec::new(v), 0).unwrap()).total();
        pass &= got == want;
        parts.push(format!("{}={got}/{want}", v.name()));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1.0;
    report(1, "census", pass, format!("{} in {secs:.3}s", parts.join(" ")));
    assert!(pass);
}

#[test]
fn criterion_2_bspline_printed_tensor() {
    let start = Instant::now();
    let printed = [
        [0.0000, 0.0000, 0.0000, 0.0208, 0.4792, 0.4792, 0.0208, 0.0000],
        [0.0000, 0.0000, 0.0000, 0.0026, 0.3151, 0.6120, 0.0703, 0.0000],
        [0.0000, 0.0000, 0.0000, 0.0000, 0.1667, 0.6667, 0.1667, 0.0000],
        [0.0000, 0.0000, 0.0000, 0.0000, 0.0703, 0.6120, 0.3151, 0.0026],
    ];
    let basis = Basis::Bspline(BSplineGrid::new(5, 3, BSPLINE_RANGE).unwrap());
    let x = Tensor::new(&[1, 4], vec![0.4, 0.5, 0.6, 0.7]).unwrap();
    let (values, _) = basis.evaluate(&x);
    assert_eq!(values.shape(), &[1, 4, 8]);
    let mut max_dev: f64 = 0.0;
    let mut max_sum_dev: f64 = 0.0;
    for (r, row) in printed.iter().enumerate() {
        let got = &values.data()[r * 8..(r + 1) * 8];
        for (a, b) in got.iter().zip(row) {
            max_dev = max_dev.max((a - b).abs());
        }
        max_sum_dev = max_sum_dev.max((got.iter().sum::<f64>() - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = max_dev <= 5e-5 && max_sum_dev <= 1e-9 && secs < 1.0;
    report(
        2,
        "bspline tensor",
        pass,
        format!("max |dev|={max_dev:.2e} (tol 5e-5), max |row sum - 1|={max_sum_dev:.2e} (tol 1e-9), {secs:.3}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_gradient_suite() {
    let start = Instant::now();
    let suite = Suite::default();
    assert_eq!((suite.batch, suite.width), (4, 16));
    let outcomes = run_suite(&suite, &default_cases(suite.width)).unwrap();
    let worst = outcomes
        .iter()
        .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
        .unwrap();
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !(o.max_error < 1e-4))
        .map(|o| o.label.as_str())
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && secs < 30.0;
    report(
        3,
        "gradcheck",
        pass,
        format!(
            "{} cases, worst {} = {:.2e} (tol 1e-4), failures {:?}, {secs:.1}s",
            outcomes.len(),
            worst.label,
            worst.max_error,
            failed
        ),
    );
    assert!(pass);
}

fn long_tier(label: &str, spec: ModelSpec, target: f64) -> (bool, String) {
    let data = mnist(4);
    let cfg = mnist_config(spec, 25, 5);
    let start = Instant::now();
    let r: ExperimentResult = run_experiment(&cfg, data, &|e| {
        eprintln!("{label} seed={} epoch={} val_acc={:.2}", e.seed, e.epoch, e.val_acc)
    })
    .unwrap();
    let acc = r.summary.val_acc;
    let pass = (acc.mean - target).abs() <= 0.5;
    (
        pass,
        format!(
            "{label} val_acc {acc} (target {target} ± 0.5), f1 {}, {:.0}s",
            r.summary.f1,
            start.elapsed().as_secs_f64()
        ),
    )
}

#[test]
#[ignore = "long tier: 2 x 25 epochs x 5 runs on MNIST"]
fn criterion_4_mnist_reproduction() {
    let _g = exclusive();
    let (a, da) = long_tier("attn", attn_layer_norm(), 97.46);
    let base = ModelSpec::new(Variant::Base).with_norm(NormKind::Layer, NormPosition::Input);
    let (b, db) = long_tier("base", base, 97.72);
    report(4, "mnist reproduction", a && b, format!("{da}; {db}"));
    assert!(a && b);
}

#[test]
fn criterion_5_mnist_smoke() {
    let _g = exclusive();
    let data = mnist(5);
    let start = Instant::now();
    let cfg = mnist_config(attn_layer_norm(), 5, 1);
    let r = run_experiment(&cfg, data, &quiet).unwrap();
    let acc = r.summary.val_acc.mean;
    let secs = start.elapsed().as_secs_f64();
    let pass = acc >= 95.5 && secs < 600.0;
    report(5, "mnist smoke", pass, format!("val_acc {acc:.2} (>= 95.5), {secs:.0}s"));
    assert!(pass);
}

#[test]
fn criterion_6_degenerate_dimsum() {
    let _g = exclusive();
    let data = mnist(6);
    let spec = ModelSpec::new(Variant::DimSum).with_norm(NormKind::None, NormPosition::Input);
    let r = run_experiment(&mnist_config(spec, 2, 1), data, &quiet).unwrap();
    let (acc, f1) = (r.summary.val_acc.mean, r.summary.f1.mean);
    let pass = acc <= 15.0 && f1 <= 5.0;
    report(6, "dimsum stall", pass, format!("val_acc {acc:.2} (<= 15), f1 {f1:.2} (<= 5)"));
    assert!(pass);
}

#[test]
fn criterion_7_batch_norm_ordering() {
    let _g = exclusive();
    let data = mnist(7);
    let score = |v: Variant| {
        let base = ModelSpec::new(v);
        let spec = base.clone().with_norm(NormKind::Batch, base.norm_position);
        let r = run_experiment(&mnist_config(spec, 5, 2), data, &quiet).unwrap();
        r.summary.val_acc.mean
    };
    let attn = score(Variant::Attn);
    let dimsum = score(Variant::DimSum);
    let convpool = score(Variant::ConvPool);
    let pass = attn - dimsum >= 0.3 && attn - convpool >= 0.3;
    report(
        7,
        "batch-norm ordering",
        pass,
        format!(
            "attn {attn:.2}, dimsum {dimsum:.2} (margin {:.2}), convpool {convpool:.2} (margin {:.2}), need >= 0.3",
            attn - dimsum,
            attn - convpool
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_grbf_faster_than_bspline() {
    let _g = exclusive();
    let data = mnist(8);
    let epoch_time = |b: BasisKind| {
        let cfg = mnist_config(attn_layer_norm().with_basis(b), 1, 1);
        train_run(&cfg, data, 0, &quiet).unwrap().1.epoch_seconds()
    };
    // interleaved so slow drift in machine load hits both families
    let mut rbf = Vec::new();
    let mut bs = Vec::new();
    for _ in 0..2 {
        rbf.push(epoch_time(BasisKind::Rbf));
        bs.push(epoch_time(BasisKind::Bspline));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (r, b) = (mean(&rbf), mean(&bs));
    let saving = (b - r) / b;
    let pass = saving >= 0.05;
    report(
        8,
        "basis timing",
        pass,
        format!("grbf {r:.2}s/epoch, bspline {b:.2}s/epoch, grbf saves {:.1}% (>= 5%)", 100.0 * saving),
    );
    assert!(pass);
}

#[test]
fn criterion_9_constant_predictor_metrics() {
    // a single dense layer whose only nonzero entry is the class-0 bias
    let spec = ModelSpec::new(Variant::Base)
        .with_norm(NormKind::None, NormPosition::Input)
        .with_structure(vec![PIXELS, 10]);
    let mut model = Model::build(&spec, 0).unwrap();
    for p in model.params_mut() {
        p.value.data_mut().fill(0.0);
        if p.name.ends_with("bias") {
            p.value.data_mut()[0] = 1.0;
        }
    }
    let n = 1000;
    let pixels = (0..n * PIXELS).map(|i| ((i * 7919) % 256) as f64 / 255.0).collect();
    let labels = (0..n).map(|i| i % 10).collect();
    let set = ImageSet::from_scaled(pixels, labels).unwrap();
    let m = evaluate(&mut model, &set, 128).unwrap();
    let pass = (m.accuracy - 10.0).abs() < 0.005 && (m.macro_f1 - 1.82).abs() <= 0.01;
    report(
        9,
        "metrics oracle",
        pass,
        format!("accuracy {:.2}% (10.00), macro-F1 {:.4}% (1.82 ± 0.01)", m.accuracy, m.macro_f1),
    );
    assert!(pass);
}
