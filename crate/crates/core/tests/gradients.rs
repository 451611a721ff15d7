//! Finite-difference checks of the hand-written reverse passes.

use hierot::hot::{frozen_plan_loss, GroundCostParams, ImageOt};
use hierot::model::{ModelDims, ModelParams, PatchGrid};
use hierot::solvers::{swd, swd_grad, ProjectionSet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_grid(rng: &mut ChaCha8Rng, k: usize, c: usize) -> PatchGrid {
    PatchGrid::new(Array2::from_shape_fn((k, c), |_| rng.random_range(-1.0..1.0))).unwrap()
}

fn setup(seed: u64, image_ot: ImageOt) -> (Vec<PatchGrid>, Vec<usize>, Vec<PatchGrid>, GroundCostParams, ModelParams, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        input_dim: 3,
        hidden_dim: 5,
        channels: 3,
        layers: 2,
        classes: 4,
    };
    let mut model = ModelParams::init(dims, seed).unwrap();
    // Nonzero biases keep the check away from ReLU kinks at exactly zero.
    for layer in &mut model.embedder {
        layer.bias.mapv_inplace(|_| rng.random_range(0.05..0.3));
    }
    let n = 4;
    let src: Vec<PatchGrid> = (0..n).map(|_| random_grid(&mut rng, 4, 3)).collect();
    let tgt: Vec<PatchGrid> = (0..n).map(|_| random_grid(&mut rng, 4, 3)).collect();
    let labels = vec![0, 3, 1, 2];
    let proj = ProjectionSet::random(5, 3, seed + 1).unwrap();
    let params = GroundCostParams::new(0.7, 0.4, 0.9, proj).unwrap().with_image_ot(image_ot);
    let plan = Array2::from_shape_fn((n, n), |_| rng.random_range(0.01..0.2));
    (src, labels, tgt, params, model, plan)
}

fn check_model_grads(image_ot: ImageOt) {
    for seed in [11, 12] {
        let (src, y, tgt, params, model, plan) = setup(seed, image_ot);
        let (_, grads, dproj) = frozen_plan_loss(&src, &y, &tgt, &params, &model, &plan).unwrap();
        let analytic: Vec<(String, Vec<f64>)> =
            grads.tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
        let mut worst = 0.0f64;
        for (t, (name, g)) in analytic.iter().enumerate() {
            for idx in 0..g.len() {
                let mut plus = model.clone();
                plus.tensors_mut()[t].1[idx] += H;
                let mut minus = model.clone();
                minus.tensors_mut()[t].1[idx] -= H;
                let lp = frozen_plan_loss(&src, &y, &tgt, &params, &plus, &plan).unwrap().0;
                let lm = frozen_plan_loss(&src, &y, &tgt, &params, &minus, &plan).unwrap().0;
                let fd = (lp - lm) / (2.0 * H);
                let e = rel_err(g[idx], fd);
                assert!(e < 1e-4, "{name}[{idx}]: analytic {} vs numeric {fd}", g[idx]);
                worst = worst.max(e);
            }
        }
        if image_ot == ImageOt::Swd {
            for m in 0..params.proj.len() {
                for c in 0..params.proj.dim() {
                    let mut p = params.clone();
                    p.proj.directions_mut()[[m, c]] += H;
                    let lp = frozen_plan_loss(&src, &y, &tgt, &p, &model, &plan).unwrap().0;
                    p.proj.directions_mut()[[m, c]] -= 2.0 * H;
                    let lm = frozen_plan_loss(&src, &y, &tgt, &p, &model, &plan).unwrap().0;
                    let fd = (lp - lm) / (2.0 * H);
                    assert!(rel_err(dproj[[m, c]], fd) < 1e-4, "proj[{m},{c}]: {} vs {fd}", dproj[[m, c]]);
                }
            }
        }
        assert!(worst < 1e-4);
    }
}

#[test]
fn frozen_plan_gradients_match_finite_differences() {
    check_model_grads(ImageOt::Swd);
}

#[test]
fn exact_patch_ot_gradients_match_finite_differences() {
    check_model_grads(ImageOt::Exact);
}

#[test]
fn swd_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let zi = random_grid(&mut rng, 6, 4);
    let zj = random_grid(&mut rng, 6, 4);
    let proj = ProjectionSet::random(7, 4, 9).unwrap();
    let g = swd_grad(&zi, &zj, &proj).unwrap();
    for k in 0..6 {
        for c in 0..4 {
            let mut p = zi.patches().clone();
            p[[k, c]] += H;
            let up = swd(&PatchGrid::new(p.clone()).unwrap(), &zj, &proj).unwrap();
            p[[k, c]] -= 2.0 * H;
            let down = swd(&PatchGrid::new(p).unwrap(), &zj, &proj).unwrap();
            let fd = (up - down) / (2.0 * H);
            assert!(rel_err(g.d_source[[k, c]], fd) < 1e-4);
        }
    }
    for m in 0..7 {
        for c in 0..4 {
            let mut p = proj.clone();
            p.directions_mut()[[m, c]] += H;
            let up = swd(&zi, &zj, &p).unwrap();
            p.directions_mut()[[m, c]] -= 2.0 * H;
            let down = swd(&zi, &zj, &p).unwrap();
            let fd = (up - down) / (2.0 * H);
            assert!(rel_err(g.d_directions[[m, c]], fd) < 1e-4);
        }
    }
}
