//! Exact transport against entropic Sinkhorn on a random 8x8 problem as the
//! regularization shrinks.

use hierot::measures::{uniform_weights, CostMatrix, DiscreteMeasure};
use hierot::{exact_ot, sinkhorn, SinkhornConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hierot::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cloud = |rng: &mut ChaCha8Rng| Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
    let x = DiscreteMeasure::new(cloud(&mut rng), uniform_weights(8))?;
    let y = DiscreteMeasure::new(cloud(&mut rng), uniform_weights(8))?;
    let cost = CostMatrix::squared_euclidean(&x, &y)?;
    let (a, b) = (x.weights(), y.weights());

    let exact = exact_ot(&cost, a, b)?;
    println!("exact OT value        {:.6}", exact.transport_value);
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        let cfg = SinkhornConfig::new(eps, f64::INFINITY).with_max_iterations(200_000);
        let plan = sinkhorn(&cost, a, b, &cfg)?;
        let rel = (plan.transport_value - exact.transport_value) / exact.transport_value;
        println!(
            "sinkhorn eps={eps:<6} <g,C> {:.6}  rel gap {rel:+.2e}  iterations {}",
            plan.transport_value, plan.iterations_used
        );
    }
    Ok(())
}
