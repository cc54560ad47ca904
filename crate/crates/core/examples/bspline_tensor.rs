//! Prints the cubic B-spline expansion of a few inputs on the default grid
//! and checks that every row sums to one.

use prkan::basis::{BSplineGrid, Basis};
use prkan::Tensor;

fn main() -> prkan::Result<()> {
    let grid = BSplineGrid::standard();
    println!("knots: {:?}", grid.knots());
    let x = Tensor::new(&[1, 4], vec![0.4, 0.5, 0.6, 0.7])?;
    let (values, _) = Basis::Bspline(grid).evaluate(&x);
    for (i, row) in values.data().chunks(8).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "x={:.1} [{}] sum={:.12}",
            x.data()[i],
            cells.join(", "),
            row.iter().sum::<f64>()
        );
    }
    Ok(())
}
