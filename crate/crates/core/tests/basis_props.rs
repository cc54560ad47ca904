use proptest::prelude::*;

use prkan::basis::{BSplineGrid, CenterGrid, BSPLINE_RANGE};

/// Textbook Cox-de Boor recursion, written independently of the library's
/// in-place triangle.
fn cox_de_boor(knots: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let left = (x - knots[i]) / (knots[i + k] - knots[i]) * cox_de_boor(knots, i, k - 1, x);
    let right = (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1])
        * cox_de_boor(knots, i + 1, k - 1, x);
    left + right
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bspline_partition_of_unity(x in -1.0f64..1.0) {
        let (v, _) = BSplineGrid::standard().eval(x);
        prop_assert_eq!(v.len(), 8);
        prop_assert!(v.iter().all(|&b| b >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // local support: at most order + 1 nonzero functions
        prop_assert!(v.iter().filter(|&&b| b > 0.0).count() <= 4);
    }

    #[test]
    fn bspline_matches_recursive_oracle(x in -1.5f64..1.5) {
        let grid = BSplineGrid::standard();
        let (v, _) = grid.eval(x);
        for (i, got) in v.iter().enumerate() {
            let want = cox_de_boor(grid.knots(), i, grid.order(), x);
            prop_assert!((got - want).abs() < 1e-12, "i={i} got {got} want {want}");
        }
    }

    #[test]
    fn bspline_derivative_matches_difference(x in -0.95f64..0.95) {
        let grid = BSplineGrid::standard();
        let h = 1e-6;
        let (_, d) = grid.eval(x);
        let (up, _) = grid.eval(x + h);
        let (down, _) = grid.eval(x - h);
        for i in 0..d.len() {
            let fd = (up[i] - down[i]) / (2.0 * h);
            prop_assert!((d[i] - fd).abs() < 1e-5, "i={i} {} vs {fd}", d[i]);
        }
    }

    #[test]
    fn gaussian_fast_path_matches_scalar_formula(x in -6.0f64..6.0) {
        let grid = CenterGrid::standard();
        let (mut v, mut d) = (vec![0.0; 8], vec![0.0; 8]);
        grid.gaussian_into(x, &mut v, &mut d);
        let h = grid.width();
        for (j, c) in grid.centers().iter().enumerate() {
            let r = (x - c) / h;
            let want = (-0.5 * r * r).exp();
            prop_assert!((v[j] - want).abs() <= 1e-12 * want + 1e-300);
            prop_assert!((d[j] - (-r / h * want)).abs() <= 1e-11 * (1.0 + want));
        }
    }
}

#[test]
fn standard_grids() {
    let g = BSplineGrid::standard();
    assert_eq!(g.range(), BSPLINE_RANGE);
    assert_eq!((g.grid_size(), g.order(), g.count()), (5, 3, 8));
    assert_eq!(g.knots().len(), 5 + 2 * 3 + 1);
    let c = CenterGrid::standard();
    assert_eq!(c.centers().len(), 8);
    assert!((c.width() - 4.0 / 7.0).abs() < 1e-15);
    assert_eq!(c.centers()[0], -2.0);
    assert_eq!(c.centers()[7], 2.0);
}

#[test]
fn gaussian_at_zero_matches_scalar_oracle() {
    let grid = CenterGrid::standard();
    let (mut v, mut d) = (vec![0.0; 8], vec![0.0; 8]);
    grid.gaussian_into(0.0, &mut v, &mut d);
    let h = 4.0 / 7.0;
    for i in 0..8 {
        let c = -2.0 + i as f64 * h;
        let want = (-(c * c) / (2.0 * h * h)).exp();
        assert!((v[i] - want).abs() < 1e-14, "center {i}: {} vs {want}", v[i]);
    }
    // symmetric grid, so the profile at zero is a palindrome
    for i in 0..4 {
        assert!((v[i] - v[7 - i]).abs() < 1e-14);
    }
}

#[test]
fn beyond_the_extended_knots_is_zero() {
    for x in [-2.3, 2.25, 3.0] {
        let (v, d) = BSplineGrid::standard().eval(x);
        assert!(v.iter().chain(&d).all(|&b| b == 0.0), "x={x}");
    }
}
