//! Unbalanced OT gives up on mass that would be expensive to move, which is
//! what keeps a mini-batch outlier from dragging the coupling around.

use hierot::measures::{uniform_weights, CostMatrix};
use hierot::{sinkhorn, unbalanced_sinkhorn, SinkhornConfig};
use ndarray::Array2;

fn main() -> hierot::Result<()> {
    // Four sources near the origin, three targets near the origin and one far away.
    let xs: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
    let ys = [0.05, 0.15, 0.25, 5.0];
    let cost = CostMatrix::new(Array2::from_shape_fn((4, 4), |(i, j)| (xs[i] - ys[j]).powi(2)))?;
    let (a, b) = (uniform_weights(4), uniform_weights(4));

    let balanced = sinkhorn(&cost, &a, &b, &SinkhornConfig::new(0.01, f64::INFINITY))?;
    println!("balanced:   mass sent to the outlier {:.4}, <g,C> {:.4}", balanced.coupling.column(3).sum(), balanced.transport_value);
    for tau in [10.0, 1.0, 0.1] {
        let plan = unbalanced_sinkhorn(&cost, &a, &b, &SinkhornConfig::new(0.01, tau))?;
        println!(
            "tau={tau:<5} mass sent to the outlier {:.4}, total mass {:.4}, <g,C> {:.4}",
            plan.coupling.column(3).sum(),
            plan.total_mass(),
            plan.transport_value
        );
    }
    Ok(())
}
