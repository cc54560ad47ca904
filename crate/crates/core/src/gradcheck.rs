//! Finite-difference checks of whole-model gradients.
//!
//! The loss is the mean cross-entropy of a small batch. Every parameter
//! element and every input element is perturbed by `±eps` and the central
//! difference is compared with the tape gradient using the relative error
//! `|analytic - numeric| / max(1, |numeric|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{BasisKind, Model, ModelSpec, NormPosition, Variant};
use crate::nn::{Mode, NormKind};
use crate::tensor::{OpKind, Tape, Tensor};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_EPS: f64 = 1e-6;

/// A named model configuration to check.
#[derive(Clone, Debug)]
pub struct GradCase {
    pub label: String,
    pub spec: ModelSpec,
}

#[derive(Clone, Debug)]
pub struct GradOutcome {
    pub label: String,
    pub max_error: f64,
    /// Tensor holding the worst coordinate (`input` or a parameter name).
    pub worst: String,
    pub passed: bool,
}

/// Every variant on `(batch, width)` inputs with hidden width `width / 2`,
/// plus the parameter-reduced variants with B-splines and with batch norm
/// at both positions.
pub fn default_cases(width: usize) -> Vec<GradCase> {
    let structure = vec![width, width / 2, 4];
    let mut cases: Vec<GradCase> = Variant::ALL
        .into_iter()
        .map(|v| GradCase {
            label: v.name().to_string(),
            spec: ModelSpec::new(v).with_structure(structure.clone()),
        })
        .collect();
    for v in Variant::PRKAN {
        cases.push(GradCase {
            label: format!("{}/bspline", v.name()),
            spec: ModelSpec::new(v)
                .with_basis(BasisKind::Bspline)
                .with_structure(structure.clone()),
        });
        for pos in [NormPosition::Input, NormPosition::Reduced] {
            cases.push(GradCase {
                label: format!("{}/batch@{pos}", v.name()),
                spec: ModelSpec::new(v)
                    .with_norm(NormKind::Batch, pos)
                    .with_structure(structure.clone()),
            });
        }
    }
    cases
}

/// Random inputs in `[-1, 1)` and labels for a toy batch.
pub fn toy_batch(batch: usize, width: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..batch * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    (Tensor::from_parts(vec![batch, width], data), labels)
}

fn loss_value(model: &mut Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let logits = model.forward(&mut tape, xv, Mode::Train)?;
    let loss = tape.cross_entropy(logits, labels)?;
    Ok(tape.value(loss).item())
}

/// Largest relative error over all parameters and inputs, and where it
/// occurred. `inject` flips the sign of one backward rule for mutation tests.
pub fn check_model(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
    inject: Option<OpKind>,
) -> Result<(f64, String)> {
    let mut tape = Tape::new();
    if let Some(kind) = inject {
        tape.inject_sign_flip(kind);
    }
    let xv = tape.leaf(x.clone());
    let logits = model.forward(&mut tape, xv, Mode::Train)?;
    let loss = tape.cross_entropy(logits, labels)?;
    tape.backward(loss)?;
    model.zero_grads();
    model.pull_grads(&tape);
    let grad_x = tape.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut worst = (0.0f64, String::from("input"));
    let mut note = |err: f64, name: &str| {
        let err = if err.is_finite() { err } else { f64::INFINITY };
        if err > worst.0 || (err.is_infinite() && worst.0.is_finite()) {
            worst = (err, name.to_string());
        }
    };
    let rel = |a: f64, n: f64| (a - n).abs() / n.abs().max(1.0);

    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for (j, &g) in grad.iter().enumerate() {
            let orig = model.params()[pi].value.data()[j];
            model.params_mut()[pi].value.data_mut()[j] = orig + eps;
            let up = loss_value(model, x, labels)?;
            model.params_mut()[pi].value.data_mut()[j] = orig - eps;
            let down = loss_value(model, x, labels)?;
            model.params_mut()[pi].value.data_mut()[j] = orig;
            note(rel(g, (up - down) / (2.0 * eps)), name);
        }
    }
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        xp.data_mut()[j] = orig + eps;
        let up = loss_value(model, &xp, labels)?;
        xp.data_mut()[j] = orig - eps;
        let down = loss_value(model, &xp, labels)?;
        xp.data_mut()[j] = orig;
        note(rel(grad_x.data()[j], (up - down) / (2.0 * eps)), "input");
    }
    Ok(worst)
}

/// Settings for [`run_suite`].
#[derive(Clone, Debug)]
pub struct Suite {
    pub batch: usize,
    pub width: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub inject: Option<OpKind>,
}

impl Default for Suite {
    fn default() -> Self {
        Self {
            batch: 4,
            width: 16,
            eps: DEFAULT_EPS,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            inject: None,
        }
    }
}

/// Checks each case; a case passes when its error is strictly below the
/// tolerance, so a tolerance of zero always fails.
pub fn run_suite(suite: &Suite, cases: &[GradCase]) -> Result<Vec<GradOutcome>> {
    cases
        .iter()
        .map(|case| {
            let mut model = Model::build(&case.spec, suite.seed)?;
            let (x, y) = toy_batch(suite.batch, suite.width, case.spec.output_dim(), suite.seed + 1);
            let (max_error, worst) = check_model(&mut model, &x, &y, suite.eps, suite.inject)?;
            Ok(GradOutcome {
                label: case.label.clone(),
                max_error,
                worst,
                passed: max_error < suite.tolerance,
            })
        })
        .collect()
}
