//! Parameter census and FLOP estimates.
//!
//! Parameter counts come from walking the built parameters of a [`Model`],
//! never from formulas. FLOPs are estimated per forward pass at batch size 1
//! from the layer configurations with these rules:
//!
//! | operation                        | FLOPs                                  |
//! |----------------------------------|----------------------------------------|
//! | matmul `(m,k) x (k,n)`           | `2 m k n`                              |
//! | bias add                         | 1 per output element                   |
//! | elementwise add / multiply       | 1 per element                          |
//! | sum reduction                    | 1 per input element                    |
//! | max pool                         | 1 per input element                    |
//! | batch or layer norm              | 8 per element                          |
//! | softmax                          | 5 per element                          |
//! | ReLU, leaky ReLU                 | 1 per element                          |
//! | other activations                | 4 per element                          |
//! | GRBF basis                       | 4 per (input, center)                  |
//! | RSWAF basis                      | 5 per (input, center)                  |
//! | B-spline basis                   | `2 (G + 2k) + 8 sum_{p=1..k} (G + 2k - p)` per input |
//!
//! A multiply-accumulate is two FLOPs, so matmul FLOPs are twice its MACs.

use std::collections::BTreeMap;
use std::fmt;

use crate::layers::{BasisKind, LayerConfig, Model, NormPosition, Variant};
use crate::nn::{NormKind, ParamRole};
use crate::tensor::Activation;

/// `d_in * d_out * (G + k) + d_out`.
pub fn kan_params_formula(d_in: u64, d_out: u64, grid_size: u64, order: u64) -> u64 {
    d_in * d_out * (grid_size + order) + d_out
}

/// `d_in * d_out + d_out`.
pub fn mlp_params_formula(d_in: u64, d_out: u64) -> u64 {
    d_in * d_out + d_out
}

/// Reference parameter counts for each variant at its default shape.
///
/// The parameter-reduced rows and EfficientKAN are reproduced exactly. The
/// other rows depend on option flags that are not pinned down, and the MLP
/// row cannot be reproduced by any placement of normalization.
pub fn reference_params(variant: Variant) -> u64 {
    match variant {
        Variant::Attn | Variant::Conv => 52604,
        Variant::ConvPool => 52730,
        Variant::DimSum => 52586,
        Variant::Fwv => 52602,
        Variant::Base => 52512,
        Variant::EfficientKan => 55580,
        Variant::FastKan => 51605,
        Variant::FasterKan => 52382,
        Variant::Bsrbf => 51588,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Norm,
    Reduction,
    Linear,
    Basis,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Norm => "norm",
            ParamGroup::Reduction => "reduction",
            ParamGroup::Linear => "linear",
            ParamGroup::Basis => "basis",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLine {
    pub module: String,
    pub group: ParamGroup,
    pub count: u64,
}

/// Trainable-parameter census of a built model. Running statistics are
/// buffers and never counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub lines: Vec<ParamLine>,
}

impl ParamReport {
    pub fn total(&self) -> u64 {
        self.lines.iter().map(|l| l.count).sum()
    }

    pub fn group_total(&self, group: ParamGroup) -> u64 {
        self.lines
            .iter()
            .filter(|l| l.group == group)
            .map(|l| l.count)
            .sum()
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "module={} group={} params={}", l.module, l.group.name(), l.count)?;
        }
        for g in [ParamGroup::Norm, ParamGroup::Reduction, ParamGroup::Linear, ParamGroup::Basis] {
            writeln!(f, "group={} params={}", g.name(), self.group_total(g))?;
        }
        write!(f, "total={}", self.total())
    }
}

const LEAF_NAMES: [&str; 5] = ["weight", "bias", "gamma", "beta", "scaler"];

fn module_of(name: &str) -> &str {
    match name.rsplit_once('.') {
        Some((head, tail)) if LEAF_NAMES.contains(&tail) => head,
        _ => name,
    }
}

fn group_of(module: &str, role: ParamRole) -> ParamGroup {
    if role == ParamRole::Norm {
        return ParamGroup::Norm;
    }
    let leaf = module.rsplit('.').next().unwrap_or(module);
    match leaf {
        "attention" | "conv" | "fwv" => ParamGroup::Reduction,
        "spline" => ParamGroup::Basis,
        _ => ParamGroup::Linear,
    }
}

pub fn count_params(model: &Model) -> ParamReport {
    let mut lines: Vec<ParamLine> = Vec::new();
    for p in model.params() {
        let module = module_of(&p.name);
        let group = group_of(module, p.role);
        match lines.last_mut() {
            Some(l) if l.module == module => l.count += p.numel() as u64,
            _ => lines.push(ParamLine {
                module: module.to_string(),
                group,
                count: p.numel() as u64,
            }),
        }
    }
    ParamReport { lines }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopLine {
    pub layer: usize,
    pub op: &'static str,
    pub flops: u64,
}

/// FLOP estimate for one forward pass at batch size 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub lines: Vec<FlopLine>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.lines.iter().map(|l| l.flops).sum()
    }

    /// Multiply-accumulate equivalents, `total / 2`.
    pub fn macs(&self) -> f64 {
        self.total() as f64 / 2.0
    }

    /// FLOPs summed by op name.
    pub fn by_op(&self) -> BTreeMap<&'static str, u64> {
        let mut m = BTreeMap::new();
        for l in &self.lines {
            *m.entry(l.op).or_insert(0) += l.flops;
        }
        m
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "layer={} op={} flops={}", l.layer, l.op, l.flops)?;
        }
        write!(f, "total_flops={}", self.total())
    }
}

pub const NORM_FLOPS: u64 = 8;
pub const SOFTMAX_FLOPS: u64 = 5;
pub const GRBF_FLOPS: u64 = 4;
pub const RSWAF_FLOPS: u64 = 5;

pub fn activation_flops(a: Activation) -> u64 {
    match a {
        Activation::Relu | Activation::LeakyRelu => 1,
        _ => 4,
    }
}

/// Cox–de Boor cost per input value: two comparisons per order-0 interval,
/// eight per higher-order function.
pub fn bspline_flops(grid_size: u64, order: u64) -> u64 {
    let intervals = grid_size + 2 * order;
    2 * intervals + (1..=order).map(|p| 8 * (intervals - p)).sum::<u64>()
}

pub fn linear_flops(d_in: u64, d_out: u64, bias: bool) -> u64 {
    2 * d_in * d_out + if bias { d_out } else { 0 }
}

fn basis_flops(cfg: &LayerConfig, d: u64) -> u64 {
    let c = cfg.num_basis as u64;
    match cfg.basis {
        BasisKind::Bspline => d * bspline_flops(cfg.grid_size as u64, cfg.spline_order as u64),
        BasisKind::Rbf => d * c * GRBF_FLOPS,
    }
}

/// FLOPs of one layer, appended to `out`.
pub fn layer_flops(index: usize, cfg: &LayerConfig, out: &mut Vec<FlopLine>) {
    let (d, o) = (cfg.d_in as u64, cfg.d_out as u64);
    let c = cfg.num_basis as u64;
    let g = (cfg.grid_size + cfg.spline_order) as u64;
    let mut push = |op: &'static str, flops: u64| {
        out.push(FlopLine {
            layer: index,
            op,
            flops,
        })
    };
    let has_norm = cfg.norm != NormKind::None;
    match cfg.variant {
        v if v.is_prkan() => {
            if has_norm && cfg.norm_position == NormPosition::Input {
                push("norm", NORM_FLOPS * d);
            }
            push("basis", basis_flops(cfg, d));
            match v {
                Variant::Attn => {
                    push("attention_scores", d * linear_flops(c, 1, true));
                    push("softmax", SOFTMAX_FLOPS * d);
                    push("weighted_sum", 2 * d * c);
                }
                Variant::Conv => push("conv", d * linear_flops(c, 1, true)),
                Variant::ConvPool => {
                    push("conv", d * linear_flops(c, c, true));
                    push("maxpool", d * c);
                }
                Variant::DimSum => push("sum", d * c),
                Variant::Fwv => push("feature_weights", 2 * d * c),
                _ => unreachable!(),
            }
            if has_norm && cfg.norm_position == NormPosition::Reduced {
                push("norm", NORM_FLOPS * d);
            }
            if v != Variant::ConvPool {
                push("activation", activation_flops(cfg.activation) * d);
            }
            push("linear", linear_flops(d, o, true));
        }
        Variant::Base => {
            if has_norm {
                push("norm", NORM_FLOPS * d);
            }
            push("linear", linear_flops(d, o, true));
            if !cfg.output_layer {
                push("activation", activation_flops(cfg.activation) * o);
            }
        }
        Variant::EfficientKan => {
            push("activation", activation_flops(Activation::Silu) * d);
            push("linear", linear_flops(d, o, false));
            push("basis", d * bspline_flops(cfg.grid_size as u64, cfg.spline_order as u64));
            push("spline_scale", d * g * o);
            push("spline", linear_flops(d * g, o, false));
            push("add", o);
        }
        Variant::FastKan => {
            push("norm", NORM_FLOPS * d);
            push("basis", d * c * GRBF_FLOPS);
            push("spline", linear_flops(d * c, o, false));
            push("activation", activation_flops(Activation::Silu) * d);
            push("linear", linear_flops(d, o, true));
            push("add", o);
        }
        Variant::FasterKan => {
            push("norm", NORM_FLOPS * d);
            push("basis", d * c * RSWAF_FLOPS);
            push("spline", linear_flops(d * c, o, false));
        }
        Variant::Bsrbf => {
            push("norm", NORM_FLOPS * d);
            push("activation", activation_flops(Activation::Silu) * d);
            push("linear", linear_flops(d, o, false));
            push("basis", d * bspline_flops(cfg.grid_size as u64, cfg.spline_order as u64));
            push("basis", d * g * GRBF_FLOPS);
            push("add", d * g);
            push("spline", linear_flops(d * g, o, false));
            push("add", o);
        }
        _ => unreachable!(),
    }
}

/// FLOPs of a layer stack; an empty stack costs nothing.
pub fn estimate_flops_configs(configs: &[LayerConfig]) -> FlopReport {
    let mut lines = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        layer_flops(i, c, &mut lines);
    }
    FlopReport { lines }
}

pub fn estimate_flops(model: &Model) -> FlopReport {
    let configs: Vec<LayerConfig> = model.layers().iter().map(|l| l.config().clone()).collect();
    estimate_flops_configs(&configs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ModelSpec;

    #[test]
    fn formulas() {
        assert_eq!(kan_params_formula(4, 1, 5, 3), 33);
        assert_eq!(kan_params_formula(784, 7, 5, 3), 43911);
        assert_eq!(kan_params_formula(784, 64, 1, 0), mlp_params_formula(784, 64));
        assert_eq!(mlp_params_formula(4, 1), 5);
        assert_eq!(mlp_params_formula(784, 64), 50240);
        assert_eq!(mlp_params_formula(1, 1), 2);
    }

    #[test]
    fn single_linear_flops() {
        let spec = ModelSpec::new(Variant::Base)
            .with_norm(NormKind::None, NormPosition::Input)
            .with_structure(vec![784, 64]);
        let m = Model::build(&spec, 0).unwrap();
        assert_eq!(estimate_flops(&m).total(), 100_416);
        assert_eq!(estimate_flops_configs(&[]).total(), 0);
    }

    #[test]
    fn module_grouping() {
        let m = Model::build(&ModelSpec::new(Variant::Attn), 0).unwrap();
        let r = count_params(&m);
        assert_eq!(r.lines[0].module, "layers.0.norm");
        assert_eq!(r.group_total(ParamGroup::Norm), 2 * 784 + 2 * 64);
        assert_eq!(r.group_total(ParamGroup::Reduction), 18);
        assert_eq!(r.group_total(ParamGroup::Linear), 50240 + 650);
        let text = r.to_string();
        assert!(text.ends_with("total=52604"), "{text}");
    }

    #[test]
    fn fwv_module_has_no_leaf_suffix() {
        let m = Model::build(&ModelSpec::new(Variant::Fwv), 0).unwrap();
        let r = count_params(&m);
        let fwv = r.lines.iter().find(|l| l.module == "layers.0.fwv").unwrap();
        assert_eq!((fwv.group, fwv.count), (ParamGroup::Reduction, 8));
    }
}
