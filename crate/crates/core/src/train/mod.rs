//! Loss, optimizer, schedule, metrics and the multi-seed driver.

pub mod experiment;
pub mod metrics;
pub mod optim;

pub use experiment::{
    read_csv, run_experiment, train_run, EpochRecord, ExperimentResult, RunResult, Stat, Summary,
    TrainConfig,
};
pub use metrics::{argmax_rows, evaluate, predict, Metrics};
pub use optim::{lr_at, AdamW, OptState};

use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Mean softmax cross-entropy of `(B, classes)` logits.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}
