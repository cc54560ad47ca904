//! Trainable building blocks shared by every layer variant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Normalization gain or shift.
    Norm,
}

/// A trainable tensor with its accumulated gradient.
///
/// `bound` is the tape node the value was recorded as during the latest
/// forward pass; [`Param::pull_grad`] reads the gradient back from there.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
    pub grad: Tensor,
    bound: Option<Var>,
}

impl Param {
    pub fn new(name: impl Into<String>, role: ParamRole, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            role,
            value,
            grad,
            bound: None,
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(
        name: impl Into<String>,
        role: ParamRole,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(name, role, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Records the current value as a differentiable leaf.
    pub fn bind(&mut self, tape: &mut Tape) -> Var {
        let v = tape.leaf(self.value.clone());
        self.bound = Some(v);
        v
    }

    /// Adds the tape gradient of the bound leaf into `grad`.
    pub fn pull_grad(&mut self, tape: &Tape) {
        if let Some(g) = self.bound.take().and_then(|v| tape.grad_slice(v)) {
            self.grad
                .data_mut()
                .iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += b);
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Fan-in scaled uniform bound `sqrt(1 / fan_in)`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense map `X (B, d_in) -> X W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(prefix: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let weight = Param::uniform(
            format!("{prefix}.weight"),
            ParamRole::Weight,
            &[d_in, d_out],
            fan_in_bound(d_in),
            rng,
        );
        let bias = bias.then(|| {
            Param::new(format!("{prefix}.bias"), ParamRole::Bias, Tensor::zeros(&[d_out]))
        });
        Self { weight, bias }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = self.weight.bind(tape);
        let y = tape.matmul(x, w)?;
        match &mut self.bias {
            Some(b) => {
                let b = b.bind(tape);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.weight];
        out.extend(self.bias.as_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.weight];
        out.extend(self.bias.as_ref());
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Layer,
    None,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Layer => "layer",
            NormKind::None => "none",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "batch" | "bn" => Ok(NormKind::Batch),
            "layer" | "ln" => Ok(NormKind::Layer),
            "none" => Ok(NormKind::None),
            _ => Err(format!("unknown normalization `{s}`")),
        }
    }
}

/// Batch or layer normalization over a `(B, D)` tensor.
///
/// Running statistics are buffers, not parameters: they are checkpointed
/// but never counted or optimized.
#[derive(Clone, Debug)]
pub struct Norm {
    pub kind: NormKind,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl Norm {
    /// Returns `None` for [`NormKind::None`].
    pub fn new(prefix: &str, kind: NormKind, dim: usize) -> Option<Self> {
        if kind == NormKind::None {
            return None;
        }
        Some(Self {
            kind,
            gamma: Param::new(format!("{prefix}.gamma"), ParamRole::Norm, Tensor::ones(&[dim])),
            beta: Param::new(format!("{prefix}.beta"), ParamRole::Norm, Tensor::zeros(&[dim])),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: NORM_EPS,
            momentum: BATCH_NORM_MOMENTUM,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let g = self.gamma.bind(tape);
        let b = self.beta.bind(tape);
        match self.kind {
            NormKind::Layer => tape.layer_norm(x, g, b, self.eps),
            NormKind::Batch => match mode {
                Mode::Train => {
                    let (y, mean, var) = tape.batch_norm(x, g, b, None, self.eps)?;
                    let n = tape.shape(x)[0] as f64;
                    let m = self.momentum;
                    for j in 0..self.dim() {
                        // running variance tracks the unbiased estimate
                        let unbiased = var[j] * n / (n - 1.0);
                        self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
                        self.running_var[j] = (1.0 - m) * self.running_var[j] + m * unbiased;
                    }
                    Ok(y)
                }
                Mode::Eval => {
                    let stats = (self.running_mean.as_slice(), self.running_var.as_slice());
                    Ok(tape.batch_norm(x, g, b, Some(stats), self.eps)?.0)
                }
            },
            NormKind::None => unreachable!("Norm is never built for NormKind::None"),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

/// Kernel-size-1 1-D convolution over `(B, C_in, D)`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
}

impl Conv1d {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::uniform(
                format!("{prefix}.weight"),
                ParamRole::Weight,
                &[c_out, c_in, 1],
                fan_in_bound(c_in),
                rng,
            ),
            bias: Param::new(format!("{prefix}.bias"), ParamRole::Bias, Tensor::zeros(&[c_out])),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = self.weight.bind(tape);
        let b = self.bias.bind(tape);
        tape.conv1d(x, w, b)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

pub fn linear(tape: &mut Tape, x: Var, p: &mut Linear) -> Result<Var> {
    let d = tape.shape(x).last().copied().unwrap_or(0);
    if d != p.d_in() {
        return Err(Error::Shape {
            op: "linear",
            lhs: tape.shape(x).to_vec(),
            rhs: p.weight.value.shape().to_vec(),
        });
    }
    p.forward(tape, x)
}

pub fn maxpool1d(tape: &mut Tape, x: Var, kernel: usize) -> Result<Var> {
    tape.max_pool1d(x, kernel)
}
