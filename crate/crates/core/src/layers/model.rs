use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelSpec;
use super::layer::{Layer, LayerTrace};
use crate::error::{Error, Result};
use crate::nn::{Mode, Norm, Param};
use crate::tensor::{Tape, Var};

/// A sequential stack of layers built from a [`ModelSpec`].
///
/// All layers draw from one ChaCha8 stream seeded with `seed`, in layer
/// order, so a `(spec, seed)` pair always yields the same weights.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    layers: Vec<Layer>,
}

impl Model {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let configs = spec.layer_configs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = configs
            .iter()
            .enumerate()
            .map(|(i, c)| Layer::build(c, &format!("layers.{i}"), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            seed,
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Logits `(B, classes)`; no softmax is applied.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "model_forward",
                lhs: shape.to_vec(),
                rhs: vec![self.spec.input_dim()],
            });
        }
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(tape, h, mode)?;
        }
        Ok(h)
    }

    /// Like [`Model::forward`] but returns every layer's trace.
    pub fn forward_traced(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Vec<LayerTrace>> {
        let mut h = x;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let t = layer.forward_traced(tape, h, mode)?;
            h = t.output;
            traces.push(t);
        }
        Ok(traces)
    }

    /// Trainable parameters in build order.
    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn norms(&self) -> Vec<&Norm> {
        self.layers.iter().flat_map(|l| l.norms()).collect()
    }

    pub fn norms_mut(&mut self) -> Vec<&mut Norm> {
        self.layers.iter_mut().flat_map(|l| l.norms_mut()).collect()
    }

    /// Accumulates tape gradients into every parameter bound in the last pass.
    pub fn pull_grads(&mut self, tape: &Tape) {
        for p in self.params_mut() {
            p.pull_grad(tape);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
