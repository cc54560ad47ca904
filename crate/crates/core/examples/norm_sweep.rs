//! Short normalization sweep for one variant on a slice of MNIST: every
//! norm kind at each position the variant supports.
//!
//! ```text
//! cargo run --release --example norm_sweep -- [variant] [epochs] [train_limit]
//! ```

use prkan::cli::sweep_cells;
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
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let limit = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6400);

    let data = load_splits(default_dir(Dataset::Mnist))?;
    println!("{:<8} {:>4} {:>10} {:>10}", "norm", "pos", "val_acc", "f1");
    for (norm, pos) in sweep_cells(variant) {
        let mut cfg = TrainConfig::standard(Dataset::Mnist, ModelSpec::new(variant).with_norm(norm, pos));
        cfg.epochs = epochs;
        cfg.runs = 1;
        cfg.train_limit = Some(limit);
        let r = run_experiment(&cfg, &data, &|_| {})?;
        println!(
            "{:<8} {:>4} {:>10.2} {:>10.2}",
            norm.name(),
            u8::from(pos),
            r.summary.val_acc.mean,
            r.summary.f1.mean
        );
    }
    Ok(())
}
