use super::ops::{broadcast_strides, broadcast_walk, gemm, BinaryOp};
use super::strides;
use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients of differentiable leaves are added to whatever previous
    /// calls left there; call [`Tape::zero_grads`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            if self.sign_flip == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            self.propagate(i, &g, &mut grads);
        }

        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            match &mut self.leaf_grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                empty => *empty = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let len = |v: Var| self.nodes[v.0].value.len();
        let shape = |v: Var| self.nodes[v.0].value.shape();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                if wants(*a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, val(*b), true, ga, 1.0);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, val(*a), true, g, false, gb, 1.0);
                }
            }
            Op::Binary { op, a, b } => {
                let (a, b, op) = (*a, *b, *op);
                let (va, vb) = (val(a), val(b));
                let (wa, wb) = (wants(a), wants(b));
                let mut ga = if wa { grads[a.0].take().unwrap_or_else(|| vec![0.0; len(a)]) } else { Vec::new() };
                let mut gb = if wb { grads[b.0].take().unwrap_or_else(|| vec![0.0; len(b)]) } else { Vec::new() };
                let walk = BinaryWalk {
                    out: node.value.shape(),
                    sa: shape(a),
                    sb: shape(b),
                    g,
                    va,
                    vb,
                    wa,
                    wb,
                };
                match op {
                    BinaryOp::Add => walk.run(&mut ga, &mut gb, |go, _, _| (go, go)),
                    BinaryOp::Sub => walk.run(&mut ga, &mut gb, |go, _, _| (go, -go)),
                    BinaryOp::Mul => walk.run(&mut ga, &mut gb, |go, x, y| (go * y, go * x)),
                    BinaryOp::Div => walk.run(&mut ga, &mut gb, |go, x, y| (go / y, -go * x / (y * y))),
                }
                if wa && wb && a == b {
                    ga.iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                    grads[a.0] = Some(ga);
                } else {
                    if wa {
                        grads[a.0] = Some(ga);
                    }
                    if wb {
                        grads[b.0] = Some(gb);
                    }
                }
            }
            Op::Scale { input, factor } => {
                if wants(*input) {
                    let gx = slot(grads, *input, g.len());
                    gx.iter_mut().zip(g).for_each(|(d, v)| *d += v * factor);
                }
            }
            Op::Sum { input, axis } => {
                if wants(*input) {
                    let (outer, n, inner) = super::split_at_axis(shape(*input), *axis);
                    let gx = slot(grads, *input, outer * n * inner);
                    if inner == 1 {
                        for (row, &go) in gx.chunks_exact_mut(n).zip(g) {
                            row.iter_mut().for_each(|d| *d += go);
                        }
                    } else {
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for j in 0..n {
                                let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                    }
                }
            }
            Op::Softmax { input, axis } => {
                if wants(*input) {
                    let y = node.value.data();
                    let (outer, n, inner) = super::split_at_axis(node.value.shape(), *axis);
                    let gx = slot(grads, *input, y.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Permute { input, order } => {
                if wants(*input) {
                    let src_strides = strides(shape(*input));
                    let gathered: Vec<usize> = order.iter().map(|&o| src_strides[o]).collect();
                    let zero = vec![0; order.len()];
                    let gx = slot(grads, *input, g.len());
                    broadcast_walk(node.value.shape(), &gathered, &zero, |o, s, _| gx[s] += g[o]);
                }
            }
            Op::Reshape { input } => {
                if wants(*input) {
                    let gx = slot(grads, *input, g.len());
                    gx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Activation { input, kind } => {
                if wants(*input) {
                    let x = val(*input);
                    let gx = slot(grads, *input, g.len());
                    for ((d, &go), &xv) in gx.iter_mut().zip(g).zip(x) {
                        *d += go * kind.derivative(xv);
                    }
                }
            }
            Op::Expand { input, deriv } => {
                if wants(*input) {
                    let c = *node.value.shape().last().unwrap();
                    let gx = slot(grads, *input, len(*input));
                    for (e, d) in gx.iter_mut().enumerate() {
                        let span = e * c..(e + 1) * c;
                        *d += g[span.clone()].iter().zip(&deriv[span]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *shape(*x).last().unwrap();
                let rows = len(*x) / d;
                let gam = val(*gamma);
                if wants(*x) {
                    let gx = slot(grads, *x, rows * d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let row = r * d..(r + 1) * d;
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            let v = g[row.start + j] * gam[j];
                            dxhat[j] = v;
                            s1 += v;
                            s2 += v * xhat[row.start + j];
                        }
                        let scale = inv_std[r] / d as f64;
                        for j in 0..d {
                            gx[row.start + j] +=
                                scale * (d as f64 * dxhat[j] - s1 - xhat[row.start + j] * s2);
                        }
                    }
                }
                affine_grads(grads, *gamma, *beta, wants(*gamma), wants(*beta), g, xhat, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = shape(*x)[1];
                let rows = shape(*x)[0];
                let gam = val(*gamma);
                if wants(*x) {
                    let gx = slot(grads, *x, rows * d);
                    if *batch_stats {
                        let mut s1 = vec![0.0; d];
                        let mut s2 = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                let v = g[r * d + j] * gam[j];
                                s1[j] += v;
                                s2[j] += v * xhat[r * d + j];
                            }
                        }
                        let n = rows as f64;
                        for r in 0..rows {
                            for j in 0..d {
                                let e = r * d + j;
                                let dxh = g[e] * gam[j];
                                gx[e] += inv_std[j] / n * (n * dxh - s1[j] - xhat[e] * s2[j]);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for j in 0..d {
                                gx[r * d + j] += g[r * d + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                }
                affine_grads(grads, *gamma, *beta, wants(*gamma), wants(*beta), g, xhat, d);
            }
            Op::Conv1d { x, w, b } => {
                let (bsz, cin, d) = (shape(*x)[0], shape(*x)[1], shape(*x)[2]);
                let cout = shape(*w)[0];
                let (xv, wv) = (val(*x), val(*w));
                if wants(*x) {
                    let gx = slot(grads, *x, bsz * cin * d);
                    for bi in 0..bsz {
                        let gb = &g[bi * cout * d..(bi + 1) * cout * d];
                        let dst = &mut gx[bi * cin * d..(bi + 1) * cin * d];
                        gemm(cin, cout, d, wv, true, gb, false, dst, 1.0);
                    }
                }
                if wants(*w) {
                    let gw = slot(grads, *w, cout * cin);
                    for bi in 0..bsz {
                        let gb = &g[bi * cout * d..(bi + 1) * cout * d];
                        let xb = &xv[bi * cin * d..(bi + 1) * cin * d];
                        gemm(cout, d, cin, gb, false, xb, true, gw, 1.0);
                    }
                }
                if wants(*b) {
                    let gbias = slot(grads, *b, cout);
                    for bi in 0..bsz {
                        for (o, acc) in gbias.iter_mut().enumerate() {
                            let start = (bi * cout + o) * d;
                            *acc += g[start..start + d].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if wants(*input) {
                    let gx = slot(grads, *input, len(*input));
                    for (w, &src) in argmax.iter().enumerate() {
                        gx[src] += g[w];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if wants(*logits) {
                    let classes = shape(*logits)[1];
                    let scale = g[0] / labels.len() as f64;
                    let gx = slot(grads, *logits, probs.len());
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let e = r * classes + j;
                            let target = if j == label { 1.0 } else { 0.0 };
                            gx[e] += scale * (probs[e] - target);
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn affine_grads(
    grads: &mut [Option<Vec<f64>>],
    gamma: Var,
    beta: Var,
    want_gamma: bool,
    want_beta: bool,
    g: &[f64],
    xhat: &[f64],
    d: usize,
) {
    if want_gamma {
        let gg = slot(grads, gamma, d);
        for (e, (&go, &h)) in g.iter().zip(xhat).enumerate() {
            gg[e % d] += go * h;
        }
    }
    if want_beta {
        let gb = slot(grads, beta, d);
        for (e, &go) in g.iter().enumerate() {
            gb[e % d] += go;
        }
    }
}

/// Operands of an elementwise node during backward.
struct BinaryWalk<'a> {
    out: &'a [usize],
    sa: &'a [usize],
    sb: &'a [usize],
    g: &'a [f64],
    va: &'a [f64],
    vb: &'a [f64],
    wa: bool,
    wb: bool,
}

impl BinaryWalk<'_> {
    /// `d(go, x, y)` returns the contributions to both operand gradients.
    fn run(&self, ga: &mut [f64], gb: &mut [f64], d: impl Fn(f64, f64, f64) -> (f64, f64)) {
        let (wa, wb) = (self.wa, self.wb);
        let mut step = |o: usize, ia: usize, ib: usize| {
            let (da, db) = d(self.g[o], self.va[ia], self.vb[ib]);
            if wa {
                ga[ia] += da;
            }
            if wb {
                gb[ib] += db;
            }
        };
        if self.sa == self.sb {
            (0..self.g.len()).for_each(|o| step(o, o, o));
        } else {
            let sa = broadcast_strides(self.sa, self.out);
            let sb = broadcast_strides(self.sb, self.out);
            broadcast_walk(self.out, &sa, &sb, step);
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 4.0, -5.0]).unwrap());
        let l = tape.sum_all(x).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_sum_gives_twice_x() {
        let mut tape = Tape::new();
        let data = vec![0.5, -1.0, 2.0];
        let x = tape.leaf(Tensor::new(&[3], data.clone()).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum_all(sq).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(x).unwrap();
        for (gv, xv) in g.data().iter().zip(&data) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[4]));
        let l = tape.sum_all(x).unwrap();
        tape.backward(l).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), Tensor::full(&[4], 2.0));
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[4]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[3]));
        let c = tape.constant(Tensor::full(&[3], 2.0));
        let y = tape.mul(x, c).unwrap();
        let l = tape.sum_all(y).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), Tensor::full(&[3], 2.0));
    }
}
