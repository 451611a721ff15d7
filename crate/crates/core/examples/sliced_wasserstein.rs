//! Sliced Wasserstein distance between two patch grids, compared with the
//! exact patch-level transport cost.

use hierot::model::PatchGrid;
use hierot::solvers::{exact_patch_ot, ot_1d};
use hierot::{swd, ProjectionSet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hierot::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (k, c) = (16, 8);
    let zi = PatchGrid::new(Array2::from_shape_fn((k, c), |_| rng.random_range(-1.0..1.0)))?;
    let zj = PatchGrid::new(Array2::from_shape_fn((k, c), |_| rng.random_range(-1.0..1.5)))?;

    let exact = exact_patch_ot(&zi, &zj)?;
    println!("exact patch OT (1/K weights)   {exact:.5}");
    for m in [1, 4, 16, 64, 256] {
        let proj = ProjectionSet::random(m, c, 11)?;
        println!("SWD with M={m:<4}               {:.5}", swd(&zi, &zj, &proj)?);
    }

    // With one channel and theta = [1] the sliced distance is the sorted
    // matching, which is K times the exact patch OT value.
    let xi = PatchGrid::new(Array2::from_shape_fn((k, 1), |_| rng.random_range(0.0..1.0)))?;
    let xj = PatchGrid::new(Array2::from_shape_fn((k, 1), |_| rng.random_range(0.0..1.0)))?;
    let unit = ProjectionSet::from_directions(Array2::ones((1, 1)), 0)?;
    let col = |g: &PatchGrid| g.patches().column(0).to_vec();
    println!(
        "C=1: swd {:.6}, ot_1d {:.6}, K * exact {:.6}",
        swd(&xi, &xj, &unit)?,
        ot_1d(&col(&xi), &col(&xj))?,
        k as f64 * exact_patch_ot(&xi, &xj)?
    );
    Ok(())
}
