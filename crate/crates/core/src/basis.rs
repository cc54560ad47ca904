//! Basis expansions `(B, D) -> (B, D, C)`.
//!
//! Every family evaluates its values and their derivatives with respect to
//! the input in one pass, and records a single [`Tape::expand`] node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_GRID_SIZE: usize = 5;
pub const DEFAULT_SPLINE_ORDER: usize = 3;
pub const DEFAULT_NUM_CENTERS: usize = 8;
pub const BSPLINE_RANGE: [f64; 2] = [-1.0, 1.0];
pub const RBF_RANGE: [f64; 2] = [-2.0, 2.0];

/// Uniform B-spline knot layout: `G` intervals over the range, extended by
/// `k` knots past each end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineGrid {
    range: [f64; 2],
    grid_size: usize,
    order: usize,
    knots: Vec<f64>,
}

impl BSplineGrid {
    pub fn new(grid_size: usize, order: usize, range: [f64; 2]) -> Result<Self> {
        if grid_size == 0 || range[1] <= range[0] || !range.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "b-spline grid needs G >= 1 and an increasing finite range, got G={grid_size}, range={range:?}"
            )));
        }
        let h = (range[1] - range[0]) / grid_size as f64;
        let knots = (0..grid_size + 2 * order + 1)
            .map(|j| range[0] + (j as f64 - order as f64) * h)
            .collect();
        Ok(Self {
            range,
            grid_size,
            order,
            knots,
        })
    }

    pub fn standard() -> Self {
        Self::new(DEFAULT_GRID_SIZE, DEFAULT_SPLINE_ORDER, BSPLINE_RANGE).expect("valid default grid")
    }

    pub fn range(&self) -> [f64; 2] {
        self.range
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `G + k`.
    pub fn count(&self) -> usize {
        self.grid_size + self.order
    }

    /// Cox-de Boor evaluation at one point. Writes `G + k` values and their
    /// derivatives; `scratch` must hold at least `G + 2k` entries.
    pub fn eval_into(&self, x: f64, values: &mut [f64], deriv: &mut [f64], scratch: &mut [f64]) {
        let t = &self.knots;
        let k = self.order;
        let n0 = t.len() - 1;
        let b = &mut scratch[..n0];
        for (j, bj) in b.iter_mut().enumerate() {
            *bj = if x >= t[j] && x < t[j + 1] { 1.0 } else { 0.0 };
        }
        if k == 0 {
            values.copy_from_slice(&b[..self.count()]);
            deriv.fill(0.0);
            return;
        }
        // elevate to order k - 1 in place; entry j only reads j and j + 1
        for p in 1..k {
            for j in 0..n0 - p {
                let left = (x - t[j]) / (t[j + p] - t[j]) * b[j];
                let right = (t[j + p + 1] - x) / (t[j + p + 1] - t[j + 1]) * b[j + 1];
                b[j] = left + right;
            }
        }
        let kf = k as f64;
        for j in 0..self.count() {
            let dl = t[j + k] - t[j];
            let dr = t[j + k + 1] - t[j + 1];
            values[j] = (x - t[j]) / dl * b[j] + (t[j + k + 1] - x) / dr * b[j + 1];
            deriv[j] = kf * (b[j] / dl - b[j + 1] / dr);
        }
    }

    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let c = self.count();
        let mut values = vec![0.0; c];
        let mut deriv = vec![0.0; c];
        let mut scratch = vec![0.0; self.knots.len()];
        self.eval_into(x, &mut values, &mut deriv, &mut scratch);
        (values, deriv)
    }
}

/// `C` uniformly spaced centers covering the range end to end, with width
/// `h = span / (C - 1)`. Shared by the Gaussian and RSWAF families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterGrid {
    range: [f64; 2],
    centers: Vec<f64>,
    width: f64,
}

pub type RbfGrid = CenterGrid;
pub type RswafGrid = CenterGrid;

impl CenterGrid {
    pub fn new(count: usize, range: [f64; 2]) -> Result<Self> {
        if count < 2 || range[1] <= range[0] || !range.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "center grid needs C >= 2 and an increasing finite range, got C={count}, range={range:?}"
            )));
        }
        let width = (range[1] - range[0]) / (count - 1) as f64;
        let centers = (0..count).map(|i| range[0] + i as f64 * width).collect();
        Ok(Self {
            range,
            centers,
            width,
        })
    }

    pub fn standard() -> Self {
        Self::new(DEFAULT_NUM_CENTERS, RBF_RANGE).expect("valid default grid")
    }

    pub fn range(&self) -> [f64; 2] {
        self.range
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    /// Gaussian `exp(-(x - c)^2 / (2 h^2))` and its derivative.
    ///
    /// With `u = (x - c_j) / h`, neighbouring centers satisfy
    /// `phi_{j+1} = phi_j * exp(u - 1/2)` and `phi_{j-1} = phi_j * exp(-u - 1/2)`,
    /// and each step multiplies that ratio by `e^-1`. Starting from the
    /// nearest center keeps the values that matter free of underflow and
    /// needs three exponentials instead of one per center.
    pub fn gaussian_into(&self, x: f64, values: &mut [f64], deriv: &mut [f64]) {
        let h = self.width;
        let inv_h2 = 1.0 / (h * h);
        let c = self.centers.len();
        let pos = ((x - self.range[0]) / h).round();
        let m = if pos.is_nan() { 0 } else { pos.clamp(0.0, (c - 1) as f64) as usize };
        let u = (x - self.centers[m]) / h;
        values[m] = (-0.5 * u * u).exp();
        let decay = (-1.0f64).exp();
        let mut ratio = (u - 0.5).exp();
        for j in m + 1..c {
            values[j] = values[j - 1] * ratio;
            ratio *= decay;
        }
        let mut ratio = (-u - 0.5).exp();
        for j in (0..m).rev() {
            values[j] = values[j + 1] * ratio;
            ratio *= decay;
        }
        for ((d, &v), &cj) in deriv.iter_mut().zip(values.iter()).zip(&self.centers) {
            *d = -(x - cj) * inv_h2 * v;
        }
    }

    /// Direct evaluation of [`CenterGrid::gaussian_into`], one exponential
    /// per center.
    pub fn gaussian_direct(&self, x: f64) -> Vec<f64> {
        let inv_h2 = 1.0 / (self.width * self.width);
        self.centers
            .iter()
            .map(|&c| (-0.5 * (x - c) * (x - c) * inv_h2).exp())
            .collect()
    }

    /// Reflectional switch `1 - tanh((x - c) / h)^2` and its derivative.
    pub fn rswaf_into(&self, x: f64, values: &mut [f64], deriv: &mut [f64]) {
        let inv_h = 1.0 / self.width;
        for ((v, d), &c) in values.iter_mut().zip(deriv.iter_mut()).zip(&self.centers) {
            let t = ((x - c) * inv_h).tanh();
            let phi = 1.0 - t * t;
            *v = phi;
            *d = -2.0 * t * phi * inv_h;
        }
    }
}

/// Which family a layer expands its inputs with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Basis {
    Bspline(BSplineGrid),
    Rbf(RbfGrid),
    Rswaf(RswafGrid),
}

impl Basis {
    pub fn count(&self) -> usize {
        match self {
            Basis::Bspline(g) => g.count(),
            Basis::Rbf(g) | Basis::Rswaf(g) => g.count(),
        }
    }

    /// Values and input-derivatives for every element of `x`, laid out as
    /// `x.shape() + [C]`.
    pub fn evaluate(&self, x: &Tensor) -> (Tensor, Vec<f64>) {
        let c = self.count();
        let n = x.len();
        let mut values = vec![0.0; n * c];
        let mut deriv = vec![0.0; n * c];
        let mut scratch = match self {
            Basis::Bspline(g) => vec![0.0; g.knots().len()],
            _ => Vec::new(),
        };
        for (i, &xv) in x.data().iter().enumerate() {
            let span = i * c..(i + 1) * c;
            let (v, d) = (&mut values[span.clone()], &mut deriv[span]);
            match self {
                Basis::Bspline(g) => g.eval_into(xv, v, d, &mut scratch),
                Basis::Rbf(g) => g.gaussian_into(xv, v, d),
                Basis::Rswaf(g) => g.rswaf_into(xv, v, d),
            }
        }
        let mut shape = x.shape().to_vec();
        shape.push(c);
        (Tensor::from_parts(shape, values), deriv)
    }

    /// Records the expansion of `x` on the tape.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (value, deriv) = self.evaluate(tape.value(x));
        tape.expand(x, value, deriv)
    }
}

pub fn bspline_basis(tape: &mut Tape, grid: &BSplineGrid, x: Var) -> Result<Var> {
    Basis::Bspline(grid.clone()).forward(tape, x)
}

pub fn grbf_basis(tape: &mut Tape, grid: &RbfGrid, x: Var) -> Result<Var> {
    Basis::Rbf(grid.clone()).forward(tape, x)
}

pub fn rswaf_basis(tape: &mut Tape, grid: &RswafGrid, x: Var) -> Result<Var> {
    Basis::Rswaf(grid.clone()).forward(tape, x)
}
