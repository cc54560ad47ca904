use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{argmax_rows, evaluate, Metrics};
use super::optim::{lr_at, AdamW};
use crate::data::{BatchPlan, ImageSet, Splits};
use crate::error::{Error, Result};
use crate::layers::{Dataset, Model, ModelSpec, Variant};
use crate::nn::{Mode, NormKind};
use crate::tensor::Tape;

/// Everything that determines a multi-seed experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: Dataset,
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Per-epoch learning-rate decay factor.
    pub gamma: f64,
    pub runs: usize,
    /// Run `r` uses seed `seed + r` for both weights and batch order.
    pub seed: u64,
    pub decay_norm: bool,
    /// Train on only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub eval_batch: usize,
    /// Fan runs out over threads.
    pub parallel: bool,
}

impl TrainConfig {
    /// Default protocol: AdamW, lr 1e-3 decayed by 0.8 per epoch,
    /// weight decay 1e-4, batch 64, five runs, 25 (MNIST) or 35
    /// (Fashion-MNIST) epochs.
    pub fn standard(dataset: Dataset, model: ModelSpec) -> Self {
        Self {
            dataset,
            model,
            epochs: match dataset {
                Dataset::Mnist => 25,
                Dataset::FashionMnist => 35,
            },
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            gamma: 0.8,
            runs: 5,
            seed: 0,
            decay_norm: true,
            train_limit: None,
            eval_batch: 1000,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.runs == 0 {
            return bad("at least one run is required");
        }
        self.model.validate()
    }
}

/// One CSV row: metrics after one epoch of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub dataset: Dataset,
    pub variant: Variant,
    pub basis: String,
    pub norm: NormKind,
    pub position: u8,
    pub seed: u64,
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub f1: f64,
    /// Training wall time of this epoch, evaluation excluded.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub train_loss: Vec<f64>,
}

impl RunResult {
    fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("a run always has at least one record")
    }

    pub fn val_acc(&self) -> f64 {
        self.last().val_acc
    }

    pub fn f1(&self) -> f64 {
        self.last().f1
    }

    pub fn train_acc(&self) -> f64 {
        self.last().train_acc
    }

    pub fn best_val_acc(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_acc).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn train_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }

    /// Mean training seconds per epoch.
    pub fn epoch_seconds(&self) -> f64 {
        self.train_seconds() / self.epochs.len() as f64
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub train_acc: Stat,
    pub val_acc: Stat,
    pub best_val_acc: Stat,
    pub f1: Stat,
    pub seconds: Stat,
}

/// Headline numbers come from the final epoch of each run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: TrainConfig,
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

impl ExperimentResult {
    fn new(config: TrainConfig, runs: Vec<RunResult>) -> Self {
        let col = |f: fn(&RunResult) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        let summary = Summary {
            train_acc: col(RunResult::train_acc),
            val_acc: col(RunResult::val_acc),
            best_val_acc: col(RunResult::best_val_acc),
            f1: col(RunResult::f1),
            seconds: col(RunResult::train_seconds),
        };
        Self {
            config,
            runs,
            summary,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &EpochRecord> {
        self.runs.iter().flat_map(|r| &r.epochs)
    }

    /// Per-epoch rows, preceded by a `#` comment carrying the config as JSON.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = format!("# config: {}\n", serde_json::to_string(&self.config)?).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in self.records() {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Reads rows written by [`ExperimentResult::write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn record(cfg: &TrainConfig, seed: u64, epoch: usize, train_acc: f64, val: Metrics, seconds: f64) -> EpochRecord {
    EpochRecord {
        dataset: cfg.dataset,
        variant: cfg.model.variant,
        basis: cfg.model.basis.name().to_string(),
        norm: cfg.model.norm,
        position: cfg.model.norm_position.into(),
        seed,
        epoch,
        train_acc,
        val_acc: val.accuracy,
        f1: val.macro_f1,
        seconds,
    }
}

/// Trains one seed. With zero epochs the initialized model is evaluated once.
pub fn train_run(
    cfg: &TrainConfig,
    data: &Splits,
    seed: u64,
    on_epoch: &(dyn Fn(&EpochRecord) + Sync),
) -> Result<(Model, RunResult)> {
    let train: ImageSet = match cfg.train_limit {
        Some(n) => data.train.head(n),
        None => data.train.clone(),
    };
    let mut model = Model::build(&cfg.model, seed)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    opt.decay_norm = cfg.decay_norm;
    let classes = cfg.model.output_dim();
    let has_batch_norm = model.norms().iter().any(|n| n.kind == NormKind::Batch);
    let mut epochs = Vec::new();
    let mut losses = Vec::new();

    if cfg.epochs == 0 {
        let tr = evaluate(&mut model, &train, cfg.eval_batch)?;
        let val = evaluate(&mut model, &data.val, cfg.eval_batch)?;
        let rec = record(cfg, seed, 0, tr.accuracy, val, 0.0);
        on_epoch(&rec);
        epochs.push(rec);
    }

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.lr, cfg.gamma);
        let plan = BatchPlan {
            seed,
            batch_size: cfg.batch_size,
            shuffle: true,
            epoch,
        };
        let start = Instant::now();
        let (mut correct, mut seen, mut loss_sum) = (0usize, 0usize, 0.0);
        for idx in plan.batches(train.len())? {
            // batch statistics are undefined for a single sample
            if has_batch_norm && idx.len() < 2 {
                continue;
            }
            let (x, y) = train.gather(&idx);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let logits = model.forward(&mut tape, xv, Mode::Train)?;
            let loss = tape.cross_entropy(logits, &y)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {lv} at seed {seed}, epoch {}",
                    epoch + 1
                )));
            }
            correct += argmax_rows(tape.value(logits))
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
            seen += y.len();
            loss_sum += lv * y.len() as f64;
            tape.backward(loss)?;
            model.zero_grads();
            model.pull_grads(&tape);
            opt.step(&mut model.params_mut(), lr)?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let val = evaluate(&mut model, &data.val, cfg.eval_batch)?;
        let train_acc = 100.0 * correct as f64 / seen.max(1) as f64;
        let rec = record(cfg, seed, epoch + 1, train_acc, val, seconds);
        debug_assert!(val.accuracy <= 100.0 && classes > 0);
        on_epoch(&rec);
        epochs.push(rec);
        losses.push(loss_sum / seen.max(1) as f64);
    }
    Ok((
        model,
        RunResult {
            seed,
            epochs,
            train_loss: losses,
        },
    ))
}

/// Runs seeds `seed..seed + runs` and aggregates their final epochs.
pub fn run_experiment(
    cfg: &TrainConfig,
    data: &Splits,
    on_epoch: &(dyn Fn(&EpochRecord) + Sync),
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|r| cfg.seed + r).collect();
    let runs: Vec<RunResult> = if cfg.parallel && seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| s.spawn(move || train_run(cfg, data, seed, on_epoch).map(|r| r.1)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        seeds
            .iter()
            .map(|&seed| train_run(cfg, data, seed, on_epoch).map(|r| r.1))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(ExperimentResult::new(cfg.clone(), runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(Stat::of(&[5.0]).std, 0.0);
    }

    #[test]
    fn validation() {
        let base = TrainConfig::standard(Dataset::Mnist, ModelSpec::new(Variant::Attn));
        assert!(base.validate().is_ok());
        assert_eq!(TrainConfig::standard(Dataset::FashionMnist, base.model.clone()).epochs, 35);
        for bad in [
            TrainConfig { gamma: 0.0, ..base.clone() },
            TrainConfig { gamma: 1.5, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { runs: 0, ..base.clone() },
            TrainConfig { lr: -1.0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
