//! Trains one model on MNIST and prints per-epoch metrics.
//!
//! ```text
//! cargo run --release --example train_mnist -- [variant] [epochs] [train_limit]
//! ```
//!
//! The dataset directory is `data/mnist` under the workspace root unless
//! `PRKAN_DATA_DIR` points elsewhere.

use prkan::data::{default_dir, load_splits};
use prkan::layers::Dataset;
use prkan::train::{run_experiment, TrainConfig};
use prkan::{ModelSpec, Variant};

fn main() -> prkan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args
        .first()
        .map_or(Ok(Variant::Attn), |s| s.parse())
        .map_err(prkan::Error::Config)?;
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let limit = args.get(2).and_then(|s| s.parse().ok());

    let data = load_splits(default_dir(Dataset::Mnist))?;
    let mut cfg = TrainConfig::standard(Dataset::Mnist, ModelSpec::new(variant));
    cfg.epochs = epochs;
    cfg.runs = 1;
    cfg.train_limit = limit;
    println!("{}", serde_json::to_string(&cfg)?);

    let result = run_experiment(&cfg, &data, &|r| {
        println!(
            "epoch {:>2}  train {:6.2}%  val {:6.2}%  f1 {:6.2}%  {:6.1}s",
            r.epoch, r.train_acc, r.val_acc, r.f1, r.seconds
        )
    })?;
    println!("val {}  f1 {}", result.summary.val_acc, result.summary.f1);
    Ok(())
}
