use proptest::prelude::*;

use prkan::tensor::{grad_check, grad_check_leaves, Activation};
use prkan::{Tape, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
}

fn sized_pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..5, 1usize..6).prop_flat_map(|(m, n)| (matrix(m, n), matrix(1, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Broadcasting a row against a matrix must agree with tiling it first,
    /// in both the value and the gradient of the broadcast operand.
    #[test]
    fn broadcast_matches_tiled_oracle((a, row) in sized_pair()) {
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let tiled: Vec<f64> = (0..m).flat_map(|_| row.data().to_vec()).collect();
        let weights: Vec<f64> = (0..m * n).map(|i| 0.5 + i as f64).collect();

        let mut tape = Tape::new();
        let av = tape.leaf(a.clone());
        let rv = tape.leaf(row.clone());
        let wv = tape.constant(Tensor::new(&[m, n], weights.clone()).unwrap());
        let prod = tape.mul(av, rv).unwrap();
        let weighted = tape.mul(prod, wv).unwrap();
        let loss = tape.sum_all(weighted).unwrap();
        tape.backward(loss).unwrap();

        for i in 0..m * n {
            prop_assert_eq!(tape.value(prod).data()[i], a.data()[i] * tiled[i]);
        }
        let g = tape.grad(rv).unwrap();
        prop_assert_eq!(g.shape(), &[1, n]);
        for j in 0..n {
            let oracle: f64 = (0..m).map(|i| a.data()[i * n + j] * weights[i * n + j]).sum();
            prop_assert!((g.data()[j] - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in matrix(3, 7), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let s = tape.softmax(xv, -1).unwrap();
        let shifted = tape.constant(x.map(|v| v + shift));
        let s2 = tape.softmax(shifted, -1).unwrap();
        let (p, q) = (tape.value(s).clone(), tape.value(s2).clone());
        for r in 0..3 {
            let row = &p.data()[r * 7..(r + 1) * 7];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
        prop_assert!(p.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn matmul_matches_triple_loop(a in matrix(3, 4), b in matrix(4, 5)) {
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(av, bv).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let oracle: f64 = (0..4).map(|k| a.at(&[i, k]) * b.at(&[k, j])).sum();
                prop_assert!((tape.value(c).at(&[i, j]) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences(x in matrix(2, 3), w in matrix(3, 4)) {
        let err = grad_check_leaves(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.activation(h, Activation::Softplus);
                let p = t.softmax(h, -1)?;
                let sq = t.mul(p, h)?;
                t.sum_all(sq)
            },
            &[x, w],
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn layer_norm_gradient(x in matrix(3, 5)) {
        let err = grad_check(
            |t, v| {
                let g = t.constant(Tensor::new(&[5], vec![1.0, 0.5, 2.0, -1.0, 0.3]).unwrap());
                let b = t.constant(Tensor::full(&[5], 0.1));
                let y = t.layer_norm(v, g, b, 1e-5)?;
                let y = t.mul(y, y)?;
                let w = t.constant(Tensor::new(&[1, 5], vec![0.2, -0.4, 1.0, 0.7, -1.3]).unwrap());
                let y = t.mul(y, w)?;
                t.sum_all(y)
            },
            &x,
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn replaying_a_graph_is_bit_identical() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2, 3], vec![0.1, -0.3, 0.7, 1.1, -2.0, 0.4]).unwrap());
        let w = tape.leaf(Tensor::new(&[3, 2], vec![0.5, -0.1, 0.9, 0.2, -0.6, 1.3]).unwrap());
        let h = tape.matmul(x, w).unwrap();
        let h = tape.activation(h, Activation::Silu);
        let loss = tape.cross_entropy(h, &[1, 0]).unwrap();
        tape.backward(loss).unwrap();
        (tape.value(loss).item(), tape.grad(w).unwrap().into_data())
    };
    assert_eq!(run(), run());
}

#[test]
fn mismatched_shapes_are_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    assert!(tape.matmul(a, b).is_err());
    assert!(tape.add(a, b).is_err());
}
