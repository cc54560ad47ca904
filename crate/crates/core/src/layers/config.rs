use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{
    BSplineGrid, Basis, CenterGrid, BSPLINE_RANGE, DEFAULT_GRID_SIZE, DEFAULT_NUM_CENTERS,
    DEFAULT_SPLINE_ORDER, RBF_RANGE,
};
use crate::error::{Error, Result};
use crate::nn::NormKind;
use crate::tensor::Activation;

/// Layer family. The first five are the parameter-reduced KAN reductions,
/// `Base` is the MLP layer and the rest are the full-size KAN baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Attn,
    Conv,
    ConvPool,
    DimSum,
    Fwv,
    Base,
    EfficientKan,
    FastKan,
    FasterKan,
    Bsrbf,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Attn,
        Variant::Conv,
        Variant::ConvPool,
        Variant::DimSum,
        Variant::Fwv,
        Variant::Base,
        Variant::EfficientKan,
        Variant::FastKan,
        Variant::FasterKan,
        Variant::Bsrbf,
    ];

    pub const PRKAN: [Variant; 5] = [
        Variant::Attn,
        Variant::Conv,
        Variant::ConvPool,
        Variant::DimSum,
        Variant::Fwv,
    ];

    pub fn is_prkan(self) -> bool {
        Self::PRKAN.contains(&self)
    }

    pub fn is_kan_baseline(self) -> bool {
        matches!(
            self,
            Variant::EfficientKan | Variant::FastKan | Variant::FasterKan | Variant::Bsrbf
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Attn => "attn",
            Variant::Conv => "conv",
            Variant::ConvPool => "convpool",
            Variant::DimSum => "dimsum",
            Variant::Fwv => "fwv",
            Variant::Base => "base",
            Variant::EfficientKan => "efficientkan",
            Variant::FastKan => "fastkan",
            Variant::FasterKan => "fasterkan",
            Variant::Bsrbf => "bsrbf",
        }
    }

    /// Display label as used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Attn => "PRKAN-attn",
            Variant::Conv => "PRKAN-conv",
            Variant::ConvPool => "PRKAN-conv&pool",
            Variant::DimSum => "PRKAN-dim-sum",
            Variant::Fwv => "PRKAN-fwv",
            Variant::Base => "MLP-base",
            Variant::EfficientKan => "EfficientKAN",
            Variant::FastKan => "FastKAN",
            Variant::FasterKan => "FasterKAN",
            Variant::Bsrbf => "BSRBF-KAN",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s
            .to_ascii_lowercase()
            .replace(['-', '_', '&'], "")
            .trim_start_matches("prkan")
            .to_string();
        let key = match key.as_str() {
            "mlp" | "mlpbase" => "base",
            "conv&pool" | "convandpool" => "convpool",
            "bsrbfkan" => "bsrbf",
            other => other,
        };
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Bspline,
    Rbf,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Bspline => "bspline",
            BasisKind::Rbf => "rbf",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "bspline" | "bs" | "spline" => Ok(BasisKind::Bspline),
            "rbf" | "grbf" => Ok(BasisKind::Rbf),
            _ => Err(format!("unknown basis `{s}`")),
        }
    }
}

/// Where a layer normalizes its `(B, D)` data: right after the input, or
/// after the reduction collapses the basis axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum NormPosition {
    Input,
    Reduced,
}

impl TryFrom<u8> for NormPosition {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(NormPosition::Input),
            2 => Ok(NormPosition::Reduced),
            _ => Err(format!("normalization position must be 1 or 2, got {v}")),
        }
    }
}

impl From<NormPosition> for u8 {
    fn from(p: NormPosition) -> u8 {
        match p {
            NormPosition::Input => 1,
            NormPosition::Reduced => 2,
        }
    }
}

impl fmt::Display for NormPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Mnist,
    FashionMnist,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::FashionMnist => "fashion-mnist",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mnist" => Ok(Dataset::Mnist),
            "fashionmnist" | "fashion" | "fmnist" => Ok(Dataset::FashionMnist),
            _ => Err(format!("unknown dataset `{s}`")),
        }
    }
}

/// Everything needed to build one layer deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub variant: Variant,
    pub basis: BasisKind,
    /// Basis count `C`. Must equal `G + k` for B-splines.
    pub num_basis: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub norm: NormKind,
    pub norm_position: NormPosition,
    pub activation: Activation,
    pub d_in: usize,
    pub d_out: usize,
    /// MLP layers skip their activation on the final output.
    pub output_layer: bool,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Config(format!(
                "layer dimensions must be positive, got {} -> {}",
                self.d_in, self.d_out
            )));
        }
        if self.variant == Variant::Base && self.norm_position == NormPosition::Reduced {
            return Err(Error::Config(
                "MLP layers only normalize after the input (position 1)".into(),
            ));
        }
        if self.variant.is_prkan() {
            if self.basis == BasisKind::Bspline && self.num_basis != self.grid_size + self.spline_order {
                return Err(Error::Config(format!(
                    "b-spline basis count must be G + k = {}, got {}",
                    self.grid_size + self.spline_order,
                    self.num_basis
                )));
            }
            if self.num_basis < 2 {
                return Err(Error::Config("basis count must be at least 2".into()));
            }
            if self.variant == Variant::ConvPool && self.d_in % self.num_basis != 0 {
                return Err(Error::Config(format!(
                    "conv&pool needs the basis count {} to divide the input width {}",
                    self.num_basis, self.d_in
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn bspline_grid(&self) -> Result<BSplineGrid> {
        BSplineGrid::new(self.grid_size, self.spline_order, BSPLINE_RANGE)
    }

    pub(crate) fn center_grid(&self) -> Result<CenterGrid> {
        CenterGrid::new(self.num_basis, RBF_RANGE)
    }

    pub(crate) fn basis(&self) -> Result<Basis> {
        Ok(match self.basis {
            BasisKind::Bspline => Basis::Bspline(self.bspline_grid()?),
            BasisKind::Rbf => Basis::Rbf(self.center_grid()?),
        })
    }
}

/// Declarative description of a whole network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub basis: BasisKind,
    pub num_basis: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub norm: NormKind,
    pub norm_position: NormPosition,
    pub activation: Activation,
    pub structure: Vec<usize>,
}

impl ModelSpec {
    /// Defaults for `variant`: GRBF with 8 centers, SiLU, `(784, 64, 10)` for
    /// the parameter-matched families and the width used to match their
    /// census for the KAN baselines, and the best normalization placement
    /// for MNIST.
    pub fn new(variant: Variant) -> Self {
        Self::recommended(variant, Dataset::Mnist)
    }

    pub fn recommended(variant: Variant, dataset: Dataset) -> Self {
        use NormKind::*;
        use NormPosition::*;
        let (norm, norm_position) = match variant {
            Variant::Attn | Variant::Fwv => (Layer, Reduced),
            Variant::Conv | Variant::ConvPool | Variant::Base => (Layer, Input),
            Variant::DimSum => match dataset {
                Dataset::Mnist => (Batch, Input),
                Dataset::FashionMnist => (Layer, Reduced),
            },
            Variant::EfficientKan => (None, Input),
            Variant::FastKan | Variant::FasterKan | Variant::Bsrbf => (Layer, Input),
        };
        let structure = match variant {
            Variant::EfficientKan | Variant::FastKan | Variant::Bsrbf => vec![784, 7, 10],
            Variant::FasterKan => vec![784, 8, 10],
            _ => vec![784, 64, 10],
        };
        Self {
            variant,
            basis: BasisKind::Rbf,
            num_basis: DEFAULT_NUM_CENTERS,
            grid_size: DEFAULT_GRID_SIZE,
            spline_order: DEFAULT_SPLINE_ORDER,
            norm,
            norm_position,
            activation: Activation::Silu,
            structure,
        }
    }

    pub fn with_norm(mut self, norm: NormKind, position: NormPosition) -> Self {
        self.norm = norm;
        self.norm_position = position;
        self
    }

    pub fn with_basis(mut self, basis: BasisKind) -> Self {
        self.basis = basis;
        if basis == BasisKind::Bspline {
            self.num_basis = self.grid_size + self.spline_order;
        }
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_structure(mut self, structure: Vec<usize>) -> Self {
        self.structure = structure;
        self
    }

    pub fn layer_configs(&self) -> Result<Vec<LayerConfig>> {
        if self.structure.len() < 2 {
            return Err(Error::Config(format!(
                "structure needs at least an input and an output width, got {:?}",
                self.structure
            )));
        }
        let last = self.structure.len() - 2;
        let configs: Vec<LayerConfig> = self
            .structure
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerConfig {
                variant: self.variant,
                basis: self.basis,
                num_basis: self.num_basis,
                grid_size: self.grid_size,
                spline_order: self.spline_order,
                norm: self.norm,
                norm_position: self.norm_position,
                activation: self.activation,
                d_in: w[0],
                d_out: w[1],
                output_layer: i == last,
            })
            .collect();
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_configs().map(|_| ())
    }

    pub fn input_dim(&self) -> usize {
        self.structure[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.structure.last().unwrap()
    }
}
