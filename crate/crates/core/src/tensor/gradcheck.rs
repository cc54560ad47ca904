use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest relative disagreement between the tape gradient of a scalar
/// function and central finite differences, over every coordinate of `x`.
///
/// Each coordinate contributes `|analytic - central| / max(1, |central|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_leaves(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once; the error is the max over all
/// coordinates of all inputs.
pub fn grad_check_leaves<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vs)?;
        let v = t.value(out);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let central = (up - down) / (2.0 * eps);
            let err = (analytic.data()[i] - central).abs() / central.abs().max(1.0);
            if !err.is_finite() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, OpKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn sum_is_exact() {
        let err = grad_check(|t, x| t.sum_all(x), &random(&[3, 5], 1), 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn softmax_then_weighted_sum() {
        let w = random(&[4, 6], 2);
        let err = grad_check(
            |t, x| {
                let s = t.softmax(x, -1)?;
                let c = t.constant(w.clone());
                let y = t.mul(s, c)?;
                t.sum_all(y)
            },
            &random(&[4, 6], 3),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn composite_chain() {
        let err = grad_check_leaves(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add(h, v[2])?;
                let h = t.activation(h, Activation::Gelu);
                let p = t.permute(h, &[1, 0])?;
                let s = t.softmax(p, 0)?;
                let q = t.div(s, v[3])?;
                let r = t.sum(q, 1)?;
                let sq = t.mul(r, r)?;
                t.sum_all(sq)
            },
            &[
                random(&[3, 4], 4),
                random(&[4, 5], 5),
                random(&[5], 6),
                random(&[5, 1], 7).map(|v| v.abs() + 0.5),
            ],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn detects_injected_sign_flip() {
        let w = random(&[4, 6], 2);
        let f = |t: &mut Tape, x: Var| {
            let s = t.softmax(x, -1)?;
            let c = t.constant(w.clone());
            let y = t.mul(s, c)?;
            t.sum_all(y)
        };
        let x = random(&[4, 6], 3);
        let mut tape = Tape::new();
        tape.inject_sign_flip(OpKind::Softmax);
        let v = tape.leaf(x.clone());
        let l = f(&mut tape, v).unwrap();
        tape.backward(l).unwrap();
        let clean = grad_check(f, &x, 1e-5).unwrap();
        assert!(clean < 1e-6);
        // the flipped tape gradient must disagree with the finite differences
        let mut reference = Tape::new();
        let rv = reference.leaf(x.clone());
        let rl = f(&mut reference, rv).unwrap();
        reference.backward(rl).unwrap();
        let diff = tape.grad(v).unwrap().max_abs_diff(&reference.grad(rv).unwrap());
        assert!(diff > 1e-3, "{diff}");
    }
}
