//! Forward rules. Each op validates shapes, computes its value eagerly and
//! records whatever the backward rule needs.

use super::tape::{Op, Tape, Var};
use super::{resolve_axis, split_at_axis, strides, Activation, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Row-major GEMM: `c (m,n) = op(a) (m,k) * op(b) (k,n) + beta * c`.
///
/// `a_t` / `b_t` read the operand as the transpose of its stored layout
/// (stored (k,m) and (n,k) respectively).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` seen through a broadcast to `out` (0 on expanded axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every output element with its flat index and the matching flat
/// indices into both broadcast operands.
pub(crate) fn broadcast_walk(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = out[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut ba, mut bb, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..last {
            f(o, ba + j * la, bb + j * lb);
            o += 1;
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            ba += sa[ax];
            bb += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ba -= sa[ax] * out[ax];
            bb -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }, rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::Shape {
            op: "elementwise",
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        fn apply(
            sa: &[usize],
            sb: &[usize],
            out_shape: &[usize],
            va: &[f64],
            vb: &[f64],
            f: impl Fn(f64, f64) -> f64,
        ) -> Vec<f64> {
            if sa == sb {
                return va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            }
            let mut data = vec![0.0; out_shape.iter().product()];
            let (ta, tb) = (broadcast_strides(sa, out_shape), broadcast_strides(sb, out_shape));
            broadcast_walk(out_shape, &ta, &tb, |o, i, j| data[o] = f(va[i], vb[j]));
            data
        }
        let data = match op {
            BinaryOp::Add => apply(&sa, &sb, &out_shape, va, vb, |x, y| x + y),
            BinaryOp::Sub => apply(&sa, &sb, &out_shape, va, vb, |x, y| x - y),
            BinaryOp::Mul => apply(&sa, &sb, &out_shape, va, vb, |x, y| x * y),
            BinaryOp::Div => apply(&sa, &sb, &out_shape, va, vb, |x, y| x / y),
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Binary { op, a, b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.requires_grad(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Sums over `axis`, dropping it from the shape.
    pub fn sum(&mut self, input: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let axis = resolve_axis("sum", axis, shape.len())?;
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.value(input).data();
        let mut out = vec![0.0; outer * inner];
        if inner == 1 {
            for (d, row) in out.iter_mut().zip(src.chunks_exact(n)) {
                *d = row.iter().sum();
            }
        } else {
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for j in 0..n {
                    let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                    dst.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Sum { input, axis },
            rg,
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        let flat = self.reshape(input, &[n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len() as f64;
        let s = self.sum_all(input)?;
        Ok(self.scale(s, 1.0 / n))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let axis = resolve_axis("softmax", axis, shape.len())?;
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.value(input).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Softmax { input, axis },
            rg,
        ))
    }

    pub fn permute(&mut self, input: Var, order: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        let valid = order.len() == rank
            && order.iter().all(|&o| o < rank && !std::mem::replace(&mut seen[o], true));
        if !valid {
            return Err(Error::invalid(
                "permute",
                format!("{order:?} is not a permutation of {rank} axes"),
            ));
        }
        let out_shape: Vec<usize> = order.iter().map(|&o| shape[o]).collect();
        let src_strides = strides(&shape);
        let gathered: Vec<usize> = order.iter().map(|&o| src_strides[o]).collect();
        let src = self.value(input).data();
        let mut out = vec![0.0; src.len()];
        let zero = vec![0; rank];
        broadcast_walk(&out_shape, &gathered, &zero, |o, i, _| out[o] = src[i]);
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Permute {
                input,
                order: order.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshaped(shape)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let value = self.value(input).map(|v| kind.apply(v));
        let rg = self.requires_grad(input);
        self.push(value, Op::Activation { input, kind }, rg)
    }

    /// Records a per-element expansion `(.., ) -> (.., C)` whose backward is
    /// `dx = sum_c g[.., c] * deriv[.., c]`.
    pub fn expand(&mut self, input: Var, value: Tensor, deriv: Vec<f64>) -> Result<Var> {
        let in_shape = self.shape(input);
        let ok = value.rank() == in_shape.len() + 1
            && &value.shape()[..in_shape.len()] == in_shape
            && deriv.len() == value.len();
        if !ok {
            return Err(Error::Shape {
                op: "expand",
                lhs: in_shape.to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Expand { input, deriv }, rg))
    }

    /// Standardizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::invalid("layer_norm", "scalar input"))?;
        self.check_affine("layer_norm", &shape, gamma, beta)?;
        let rows = self.value(x).len() / d;
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Column-wise normalization of (B, D).
    ///
    /// With `stats = None` the batch mean and biased variance are used and
    /// returned alongside the output; otherwise the supplied (mean, var) pair
    /// is applied as a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid("batch_norm", format!("expected (B, D), got {shape:?}")));
        }
        self.check_affine("batch_norm", &shape, gamma, beta)?;
        let (bsz, d) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let (mean, var) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                if bsz < 2 {
                    return Err(Error::invalid(
                        "batch_norm",
                        format!("training mode needs at least 2 rows, got {bsz}"),
                    ));
                }
                let mut mean = vec![0.0; d];
                for r in 0..bsz {
                    mean.iter_mut().zip(&src[r * d..(r + 1) * d]).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= bsz as f64);
                let mut var = vec![0.0; d];
                for r in 0..bsz {
                    for j in 0..d {
                        let c = src[r * d + j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= bsz as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for r in 0..bsz {
            for j in 0..d {
                let h = (src[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: stats.is_none(),
            },
            rg,
        );
        Ok((v, mean, var))
    }

    /// Kernel-size-1 convolution: `out[b,o,d] = sum_i w[o,i,0] x[b,i,d] + bias[o]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(bias).to_vec(),
        );
        if sx.len() != 3 || sw.len() != 3 || sw[2] != 1 || sw[1] != sx[1] || sb != [sw[0]] {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (bsz, cin, d, cout) = (sx[0], sx[1], sx[2], sw[0]);
        let (xv, wv, bv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
        );
        let mut out = vec![0.0; bsz * cout * d];
        for b in 0..bsz {
            let dst = &mut out[b * cout * d..(b + 1) * cout * d];
            for (o, row) in dst.chunks_mut(d).enumerate() {
                row.fill(bv[o]);
            }
            gemm(cout, cin, d, wv, false, &xv[b * cin * d..(b + 1) * cin * d], false, dst, 1.0);
        }
        let rg = self.any_grad(&[x, w, bias]);
        Ok(self.push(
            Tensor::from_parts(vec![bsz, cout, d], out),
            Op::Conv1d { x, w, b: bias },
            rg,
        ))
    }

    /// Non-overlapping max pooling over the last axis of (B, C, D).
    /// Ties resolve to the first index in the window.
    pub fn max_pool1d(&mut self, input: Var, kernel: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 3 {
            return Err(Error::invalid("max_pool1d", format!("expected (B, C, D), got {shape:?}")));
        }
        let d = shape[2];
        if kernel == 0 || d % kernel != 0 {
            return Err(Error::invalid(
                "max_pool1d",
                format!("kernel {kernel} does not divide length {d}"),
            ));
        }
        let src = self.value(input).data();
        let windows = src.len() / kernel;
        let mut out = Vec::with_capacity(windows);
        let mut argmax = Vec::with_capacity(windows);
        for w in 0..windows {
            let base = w * kernel;
            let mut best = base;
            for i in base + 1..base + kernel {
                if src[i] > src[best] {
                    best = i;
                }
            }
            out.push(src[best]);
            argmax.push(best);
        }
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::from_parts(vec![shape[0], shape[1], d / kernel], out),
            Op::MaxPool { input, argmax },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::invalid(
                "cross_entropy",
                format!("logits {shape:?} vs {} labels", labels.len()),
            ));
        }
        let (bsz, classes) = (shape[0], shape[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut loss = 0.0;
        for r in 0..bsz {
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[labels[r]];
            for j in 0..classes {
                probs[r * classes + j] = (row[j] - lse).exp();
            }
        }
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss / bsz as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    fn check_affine(&self, op: &'static str, shape: &[usize], gamma: Var, beta: Var) -> Result<()> {
        let d = shape[shape.len() - 1];
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op,
                    lhs: shape.to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        Ok(())
    }
}
