use rand::Rng;

use super::config::{LayerConfig, NormPosition, Variant};
use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::nn::{fan_in_bound, Conv1d, Linear, Mode, Norm, NormKind, Param, ParamRole};
use crate::tensor::{Activation, Tape, Tensor, Var};

/// How a parameter-reduced layer collapses `(B, D, C)` to `(B, D)`.
#[derive(Clone, Debug)]
pub enum Reduction {
    /// Linear `C -> 1`, softmax over `D`, weighted sum over `C`.
    Attention(Linear),
    /// 1x1 convolution `C -> 1`, squeezed.
    Conv(Conv1d),
    /// 1x1 convolution `C -> C`, max pool of width `C` along `D`, reshaped.
    ConvPool(Conv1d),
    /// Plain sum over `C`.
    DimSum,
    /// Learnable feature vector `M: (C, 1)`.
    FeatureWeights(Param),
}

impl Reduction {
    fn params(&self) -> Vec<&Param> {
        match self {
            Reduction::Attention(l) => l.params(),
            Reduction::Conv(c) | Reduction::ConvPool(c) => c.params(),
            Reduction::DimSum => Vec::new(),
            Reduction::FeatureWeights(m) => vec![m],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Reduction::Attention(l) => l.params_mut(),
            Reduction::Conv(c) | Reduction::ConvPool(c) => c.params_mut(),
            Reduction::DimSum => Vec::new(),
            Reduction::FeatureWeights(m) => vec![m],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Body {
    Prkan {
        norm: Option<Norm>,
        basis: Basis,
        reduction: Reduction,
        out: Linear,
    },
    Mlp {
        norm: Option<Norm>,
        out: Linear,
    },
    /// `W_base silu(x) + (W_spline * scaler) bspline(x)`, no bias.
    EfficientKan {
        basis: Basis,
        base: Linear,
        spline_weight: Param,
        spline_scaler: Param,
    },
    /// Layer norm, Gaussian features through a bias-free linear map, plus
    /// a biased `silu` base branch on the raw input.
    FastKan {
        norm: Norm,
        basis: Basis,
        spline: Linear,
        base: Linear,
    },
    /// Layer norm, RSWAF features through a bias-free linear map.
    FasterKan {
        norm: Norm,
        basis: Basis,
        spline: Linear,
    },
    /// Layer norm, then `W_base silu(x) + W_s (bspline(x) + grbf(x))`.
    Bsrbf {
        norm: Norm,
        bspline: Basis,
        rbf: Basis,
        base: Linear,
        spline: Linear,
    },
}

/// Intermediate handles recorded by [`Layer::forward_traced`].
#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    pub output: Var,
    /// Basis expansion `(B, D, C)`.
    pub basis: Option<Var>,
    /// Softmax attention weights `(B, D, 1)`.
    pub attention: Option<Var>,
    /// Reduced `(B, D)` map, before any position-2 normalization.
    pub reduced: Option<Var>,
}

/// One network layer of any [`Variant`].
#[derive(Clone, Debug)]
pub struct Layer {
    config: LayerConfig,
    pub(crate) body: Body,
}

impl Layer {
    pub fn build(config: &LayerConfig, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d_in, d_out) = (config.d_in, config.d_out);
        let c = config.num_basis;
        let p = |s: &str| format!("{prefix}.{s}");
        let body = match config.variant {
            v if v.is_prkan() => {
                let reduction = match v {
                    Variant::Attn => Reduction::Attention(Linear::new(&p("attention"), c, 1, true, rng)),
                    Variant::Conv => Reduction::Conv(Conv1d::new(&p("conv"), c, 1, rng)),
                    Variant::ConvPool => Reduction::ConvPool(Conv1d::new(&p("conv"), c, c, rng)),
                    Variant::DimSum => Reduction::DimSum,
                    Variant::Fwv => Reduction::FeatureWeights(Param::uniform(
                        p("fwv"),
                        ParamRole::Weight,
                        &[c, 1],
                        fan_in_bound(c),
                        rng,
                    )),
                    _ => unreachable!(),
                };
                Body::Prkan {
                    norm: Norm::new(&p("norm"), config.norm, d_in),
                    basis: config.basis()?,
                    reduction,
                    out: Linear::new(&p("out"), d_in, d_out, true, rng),
                }
            }
            Variant::Base => Body::Mlp {
                norm: Norm::new(&p("norm"), config.norm, d_in),
                out: Linear::new(&p("out"), d_in, d_out, true, rng),
            },
            Variant::EfficientKan => {
                let grid = config.bspline_grid()?;
                let g = grid.count();
                let base = Linear::new(&p("base"), d_in, d_out, false, rng);
                // spline coefficients start as small noise, scaled by the grid size
                let noise = 0.1 / config.grid_size as f64;
                let spline_weight =
                    Param::uniform(p("spline.weight"), ParamRole::Weight, &[d_in, g, d_out], noise / 2.0, rng);
                let spline_scaler = Param::uniform(
                    p("spline.scaler"),
                    ParamRole::Weight,
                    &[d_in, 1, d_out],
                    fan_in_bound(d_in),
                    rng,
                );
                Body::EfficientKan {
                    basis: Basis::Bspline(grid),
                    base,
                    spline_weight,
                    spline_scaler,
                }
            }
            Variant::FastKan => {
                let grid = config.center_grid()?;
                Body::FastKan {
                    norm: layer_norm(&p("norm"), d_in),
                    spline: spline_linear(&p("spline"), d_in * grid.count(), d_out, rng),
                    basis: Basis::Rbf(grid),
                    base: Linear::new(&p("base"), d_in, d_out, true, rng),
                }
            }
            Variant::FasterKan => {
                let grid = config.center_grid()?;
                Body::FasterKan {
                    norm: layer_norm(&p("norm"), d_in),
                    spline: spline_linear(&p("spline"), d_in * grid.count(), d_out, rng),
                    basis: Basis::Rswaf(grid),
                }
            }
            Variant::Bsrbf => {
                let bs = config.bspline_grid()?;
                let rbf = crate::basis::CenterGrid::new(bs.count(), crate::basis::RBF_RANGE)?;
                Body::Bsrbf {
                    norm: layer_norm(&p("norm"), d_in),
                    base: Linear::new(&p("base"), d_in, d_out, false, rng),
                    spline: spline_linear(&p("spline"), d_in * bs.count(), d_out, rng),
                    bspline: Basis::Bspline(bs),
                    rbf: Basis::Rbf(rbf),
                }
            }
            _ => unreachable!(),
        };
        Ok(Self {
            config: config.clone(),
            body,
        })
    }

    pub fn config(&self) -> &LayerConfig {
        &self.config
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_traced(tape, x, mode)?.output)
    }

    pub fn forward_traced(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<LayerTrace> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.config.d_in {
            return Err(Error::Shape {
                op: self.config.variant.name(),
                lhs: shape.to_vec(),
                rhs: vec![self.config.d_in, self.config.d_out],
            });
        }
        let cfg = &self.config;
        match &mut self.body {
            Body::Prkan {
                norm,
                basis,
                reduction,
                out,
            } => forward_prkan(tape, x, mode, cfg, norm.as_mut(), basis, reduction, out),
            Body::Mlp { norm, out } => {
                let mut h = x;
                if let Some(n) = norm {
                    h = n.forward(tape, h, mode)?;
                }
                h = out.forward(tape, h)?;
                if !cfg.output_layer {
                    h = tape.activation(h, cfg.activation);
                }
                Ok(LayerTrace::plain(h))
            }
            Body::EfficientKan {
                basis,
                base,
                spline_weight,
                spline_scaler,
            } => {
                let act = tape.activation(x, Activation::Silu);
                let base_out = base.forward(tape, act)?;
                let feats = basis.forward(tape, x)?;
                let flat = flatten_features(tape, feats)?;
                let w = spline_weight.bind(tape);
                let s = spline_scaler.bind(tape);
                let scaled = tape.mul(w, s)?;
                let g = basis.count();
                let scaled = tape.reshape(scaled, &[cfg.d_in * g, cfg.d_out])?;
                let spline_out = tape.matmul(flat, scaled)?;
                let y = tape.add(base_out, spline_out)?;
                Ok(LayerTrace {
                    basis: Some(feats),
                    ..LayerTrace::plain(y)
                })
            }
            Body::FastKan {
                norm,
                basis,
                spline,
                base,
            } => {
                let h = norm.forward(tape, x, mode)?;
                let feats = basis.forward(tape, h)?;
                let flat = flatten_features(tape, feats)?;
                let spline_out = spline.forward(tape, flat)?;
                let act = tape.activation(x, Activation::Silu);
                let base_out = base.forward(tape, act)?;
                let y = tape.add(spline_out, base_out)?;
                Ok(LayerTrace {
                    basis: Some(feats),
                    ..LayerTrace::plain(y)
                })
            }
            Body::FasterKan {
                norm,
                basis,
                spline,
            } => {
                let h = norm.forward(tape, x, mode)?;
                let feats = basis.forward(tape, h)?;
                let flat = flatten_features(tape, feats)?;
                let y = spline.forward(tape, flat)?;
                Ok(LayerTrace {
                    basis: Some(feats),
                    ..LayerTrace::plain(y)
                })
            }
            Body::Bsrbf {
                norm,
                bspline,
                rbf,
                base,
                spline,
            } => {
                let h = norm.forward(tape, x, mode)?;
                let act = tape.activation(h, Activation::Silu);
                let base_out = base.forward(tape, act)?;
                let bs = bspline.forward(tape, h)?;
                let gs = rbf.forward(tape, h)?;
                let both = tape.add(bs, gs)?;
                let flat = flatten_features(tape, both)?;
                let spline_out = spline.forward(tape, flat)?;
                let y = tape.add(base_out, spline_out)?;
                Ok(LayerTrace {
                    basis: Some(both),
                    ..LayerTrace::plain(y)
                })
            }
        }
    }

    /// Trainable parameters in build order.
    pub fn params(&self) -> Vec<&Param> {
        match &self.body {
            Body::Prkan {
                norm,
                reduction,
                out,
                ..
            } => {
                let mut v: Vec<&Param> = norm.iter().flat_map(|n| n.params()).collect();
                v.extend(reduction.params());
                v.extend(out.params());
                v
            }
            Body::Mlp { norm, out } => {
                let mut v: Vec<&Param> = norm.iter().flat_map(|n| n.params()).collect();
                v.extend(out.params());
                v
            }
            Body::EfficientKan {
                base,
                spline_weight,
                spline_scaler,
                ..
            } => {
                let mut v = base.params();
                v.push(spline_weight);
                v.push(spline_scaler);
                v
            }
            Body::FastKan {
                norm, spline, base, ..
            } => [norm.params(), spline.params(), base.params()].concat(),
            Body::FasterKan { norm, spline, .. } => [norm.params(), spline.params()].concat(),
            Body::Bsrbf {
                norm, base, spline, ..
            } => [norm.params(), base.params(), spline.params()].concat(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.body {
            Body::Prkan {
                norm,
                reduction,
                out,
                ..
            } => {
                let mut v: Vec<&mut Param> = norm.iter_mut().flat_map(|n| n.params_mut()).collect();
                v.extend(reduction.params_mut());
                v.extend(out.params_mut());
                v
            }
            Body::Mlp { norm, out } => {
                let mut v: Vec<&mut Param> = norm.iter_mut().flat_map(|n| n.params_mut()).collect();
                v.extend(out.params_mut());
                v
            }
            Body::EfficientKan {
                base,
                spline_weight,
                spline_scaler,
                ..
            } => {
                let mut v = base.params_mut();
                v.push(spline_weight);
                v.push(spline_scaler);
                v
            }
            Body::FastKan {
                norm, spline, base, ..
            } => {
                let mut v = norm.params_mut();
                v.extend(spline.params_mut());
                v.extend(base.params_mut());
                v
            }
            Body::FasterKan { norm, spline, .. } => {
                let mut v = norm.params_mut();
                v.extend(spline.params_mut());
                v
            }
            Body::Bsrbf {
                norm, base, spline, ..
            } => {
                let mut v = norm.params_mut();
                v.extend(base.params_mut());
                v.extend(spline.params_mut());
                v
            }
        }
    }

    /// Normalization layers of this layer (for running statistics).
    pub fn norms_mut(&mut self) -> Vec<&mut Norm> {
        match &mut self.body {
            Body::Prkan { norm, .. } | Body::Mlp { norm, .. } => norm.iter_mut().collect(),
            Body::EfficientKan { .. } => Vec::new(),
            Body::FastKan { norm, .. } | Body::FasterKan { norm, .. } | Body::Bsrbf { norm, .. } => {
                vec![norm]
            }
        }
    }

    pub fn norms(&self) -> Vec<&Norm> {
        match &self.body {
            Body::Prkan { norm, .. } | Body::Mlp { norm, .. } => norm.iter().collect(),
            Body::EfficientKan { .. } => Vec::new(),
            Body::FastKan { norm, .. } | Body::FasterKan { norm, .. } | Body::Bsrbf { norm, .. } => {
                vec![norm]
            }
        }
    }

    /// Mutable access to the reduction block of a parameter-reduced layer.
    pub fn reduction_mut(&mut self) -> Option<&mut Reduction> {
        match &mut self.body {
            Body::Prkan { reduction, .. } => Some(reduction),
            _ => None,
        }
    }

    /// Mutable access to the final dense map of PRKAN and MLP layers.
    pub fn output_linear_mut(&mut self) -> Option<&mut Linear> {
        match &mut self.body {
            Body::Prkan { out, .. } | Body::Mlp { out, .. } => Some(out),
            _ => None,
        }
    }
}

impl LayerTrace {
    fn plain(output: Var) -> Self {
        Self {
            output,
            basis: None,
            attention: None,
            reduced: None,
        }
    }
}

fn layer_norm(prefix: &str, dim: usize) -> Norm {
    Norm::new(prefix, NormKind::Layer, dim).expect("layer norm is never None")
}

fn spline_linear(prefix: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Linear {
    Linear::new(prefix, d_in, d_out, false, rng)
}

/// `(B, D, C) -> (B, D * C)`.
fn flatten_features(tape: &mut Tape, feats: Var) -> Result<Var> {
    let s = tape.shape(feats).to_vec();
    tape.reshape(feats, &[s[0], s[1] * s[2]])
}

#[allow(clippy::too_many_arguments)]
fn forward_prkan(
    tape: &mut Tape,
    x: Var,
    mode: Mode,
    cfg: &LayerConfig,
    mut norm: Option<&mut Norm>,
    basis: &Basis,
    reduction: &mut Reduction,
    out: &mut Linear,
) -> Result<LayerTrace> {
    let mut h = x;
    if cfg.norm_position == NormPosition::Input {
        if let Some(n) = norm.as_deref_mut() {
            h = n.forward(tape, h, mode)?;
        }
    }
    let feats = basis.forward(tape, h)?;
    let (bsz, d) = (tape.shape(x)[0], cfg.d_in);
    let c = basis.count();
    let mut attention = None;
    let reduced = match reduction {
        Reduction::Attention(lin) => forward_attn(tape, feats, lin, &mut attention, (bsz, d, c))?,
        Reduction::Conv(conv) => forward_conv(tape, feats, conv, (bsz, d))?,
        Reduction::ConvPool(conv) => forward_convpool(tape, feats, conv, (bsz, d, c))?,
        Reduction::DimSum => forward_dimsum(tape, feats)?,
        Reduction::FeatureWeights(m) => forward_fwv(tape, feats, m, (bsz, d, c))?,
    };
    let mut h = reduced;
    if cfg.norm_position == NormPosition::Reduced {
        if let Some(n) = norm {
            h = n.forward(tape, h, mode)?;
        }
    }
    if cfg.variant != Variant::ConvPool {
        h = tape.activation(h, cfg.activation);
    }
    let output = out.forward(tape, h)?;
    Ok(LayerTrace {
        output,
        basis: Some(feats),
        attention,
        reduced: Some(reduced),
    })
}

fn forward_attn(
    tape: &mut Tape,
    feats: Var,
    lin: &mut Linear,
    attention: &mut Option<Var>,
    (b, d, c): (usize, usize, usize),
) -> Result<Var> {
    let flat = tape.reshape(feats, &[b * d, c])?;
    let scores = lin.forward(tape, flat)?;
    let scores = tape.reshape(scores, &[b, d, 1])?;
    let weights = tape.softmax(scores, -2)?;
    *attention = Some(weights);
    let weighted = tape.mul(feats, weights)?;
    tape.sum(weighted, -1)
}

fn forward_conv(tape: &mut Tape, feats: Var, conv: &mut Conv1d, (b, d): (usize, usize)) -> Result<Var> {
    let channels = tape.permute(feats, &[0, 2, 1])?;
    let mixed = conv.forward(tape, channels)?;
    tape.reshape(mixed, &[b, d])
}

fn forward_convpool(
    tape: &mut Tape,
    feats: Var,
    conv: &mut Conv1d,
    (b, d, c): (usize, usize, usize),
) -> Result<Var> {
    let channels = tape.permute(feats, &[0, 2, 1])?;
    let mixed = conv.forward(tape, channels)?;
    let pooled = tape.max_pool1d(mixed, c)?;
    tape.reshape(pooled, &[b, d])
}

fn forward_dimsum(tape: &mut Tape, feats: Var) -> Result<Var> {
    tape.sum(feats, -1)
}

fn forward_fwv(tape: &mut Tape, feats: Var, m: &mut Param, (b, d, c): (usize, usize, usize)) -> Result<Var> {
    let flat = tape.reshape(feats, &[b * d, c])?;
    let mv = m.bind(tape);
    let collapsed = tape.matmul(flat, mv)?;
    tape.reshape(collapsed, &[b, d])
}

/// Sets every entry of a parameter to `value`; handy for probing layers.
pub fn fill_param(p: &mut Param, value: f64) {
    p.value = Tensor::full(p.value.shape(), value);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::config::{BasisKind, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(variant: Variant) -> LayerConfig {
        let mut spec = ModelSpec::new(variant).with_structure(vec![784, 64]);
        spec.norm = NormKind::Layer;
        spec.layer_configs().unwrap().remove(0)
    }

    fn count(layer: &Layer) -> usize {
        layer.params().iter().map(|p| p.numel()).sum()
    }

    #[test]
    fn first_layer_census_per_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let expect = [
            (Variant::Attn, 51817),
            (Variant::Conv, 51817),
            (Variant::ConvPool, 51880),
            (Variant::DimSum, 51808),
            (Variant::Fwv, 51816),
            (Variant::Base, 51808),
        ];
        for (v, n) in expect {
            let layer = Layer::build(&cfg(v), "l0", &mut rng).unwrap();
            assert_eq!(count(&layer), n, "{v}");
        }
    }

    #[test]
    fn params_and_params_mut_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in Variant::ALL {
            let spec = ModelSpec::new(v).with_structure(vec![16, 4]);
            let c = spec.layer_configs().unwrap().remove(0);
            let mut layer = Layer::build(&c, "l", &mut rng).unwrap();
            let a: Vec<String> = layer.params().iter().map(|p| p.name.clone()).collect();
            let b: Vec<String> = layer.params_mut().iter().map(|p| p.name.clone()).collect();
            assert_eq!(a, b, "{v}");
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Layer::build(&cfg(Variant::Attn), "l", &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 100]));
        assert!(layer.forward(&mut tape, x, Mode::Train).is_err());
    }

    #[test]
    fn bspline_layers_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ModelSpec::new(Variant::Conv)
            .with_basis(BasisKind::Bspline)
            .with_structure(vec![16, 4]);
        let c = spec.layer_configs().unwrap().remove(0);
        let mut layer = Layer::build(&c, "l", &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[3, 16], 0.3));
        let y = layer.forward(&mut tape, x, Mode::Train).unwrap();
        assert_eq!(tape.shape(y), &[3, 4]);
    }
}
