//! Property tests for measures and the transport solvers.

use hierot::measures::{frobenius, uniform_weights, CostMatrix, DiscreteMeasure};
use hierot::model::PatchGrid;
use hierot::solvers::{exact_ot, sinkhorn, swd, swd_grad, unbalanced_sinkhorn, ProjectionSet, SinkhornConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cost_and_marginals(seed: u64, m: usize, n: usize) -> (CostMatrix, Array1<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost = CostMatrix::new(Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..1.0))).unwrap();
    let mut simplex = |k: usize| {
        let w = Array1::from_shape_fn(k, |_| rng.random_range(0.2..1.0));
        let s = w.sum();
        w / s
    };
    let a = simplex(m);
    let b = simplex(n);
    (cost, a, b)
}

fn grid(rng: &mut ChaCha8Rng, k: usize, c: usize) -> PatchGrid {
    PatchGrid::new(Array2::from_shape_fn((k, c), |_| rng.random_range(-2.0..2.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_cost_is_symmetric_with_zero_diagonal(seed in any::<u64>(), n in 1usize..8, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let mu = DiscreteMeasure::uniform(&pts).unwrap();
        let c = CostMatrix::squared_euclidean(&mu, &mu).unwrap();
        for i in 0..n {
            prop_assert_eq!(c.entries()[[i, i]], 0.0);
            for j in 0..n {
                prop_assert_eq!(c.entries()[[i, j]], c.entries()[[j, i]]);
            }
        }
    }

    #[test]
    fn balanced_plans_reproduce_their_marginals(seed in any::<u64>(), m in 1usize..8, n in 1usize..8, eps in 0.05f64..1.0) {
        let (cost, a, b) = cost_and_marginals(seed, m, n);
        let cfg = SinkhornConfig::new(eps, f64::INFINITY).with_tolerance(1e-10).with_max_iterations(50_000);
        let plan = sinkhorn(&cost, &a, &b, &cfg).unwrap();
        prop_assert!(plan.converged);
        prop_assert!(plan.marginal_deviation(&a, &b) < 1e-6);
        let exact = exact_ot(&cost, &a, &b).unwrap();
        prop_assert!(exact.marginal_deviation(&a, &b) < 1e-12);
    }

    #[test]
    fn transport_value_is_invariant_under_joint_permutation(seed in any::<u64>(), n in 2usize..8) {
        let (cost, a, b) = cost_and_marginals(seed, n, n);
        let plan = exact_ot(&cost, &a, &b).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permute = |x: &Array2<f64>| Array2::from_shape_fn((n, n), |(i, j)| x[[perm[i], perm[j]]]);
        let v = frobenius(&permute(&plan.coupling), &permute(cost.entries()));
        prop_assert!((v - plan.transport_value).abs() < 1e-12);
    }

    #[test]
    fn exact_value_lower_bounds_other_feasible_plans(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
        let (cost, a, b) = cost_and_marginals(seed, m, n);
        let exact = exact_ot(&cost, &a, &b).unwrap().transport_value;
        let product = Array2::from_shape_fn((m, n), |(i, j)| a[i] * b[j]);
        prop_assert!(frobenius(&product, cost.entries()) >= exact - 1e-9);
        for eps in [1.0, 0.1, 0.01] {
            let cfg = SinkhornConfig::new(eps, f64::INFINITY).with_tolerance(1e-11).with_max_iterations(100_000).with_epsilon_scaling(true);
            let plan = sinkhorn(&cost, &a, &b, &cfg).unwrap();
            prop_assert!(plan.transport_value >= exact - 1e-9, "eps {}: {} < {}", eps, plan.transport_value, exact);
        }
    }

    #[test]
    fn sinkhorn_value_decreases_with_epsilon(seed in any::<u64>()) {
        let (cost, a, b) = cost_and_marginals(seed, 8, 8);
        let exact = exact_ot(&cost, &a, &b).unwrap().transport_value;
        let mut prev = f64::INFINITY;
        for eps in [1.0, 0.1, 0.01, 0.001] {
            let cfg = SinkhornConfig::new(eps, f64::INFINITY).with_tolerance(1e-10).with_max_iterations(200_000).with_epsilon_scaling(true);
            let v = sinkhorn(&cost, &a, &b, &cfg).unwrap().transport_value;
            prop_assert!(v <= prev + 1e-6, "eps {}: {} after {}", eps, v, prev);
            prop_assert!(v >= exact - 1e-6);
            prev = v;
        }
    }

    #[test]
    fn large_tau_recovers_balanced_marginals(seed in any::<u64>()) {
        let (cost, a, b) = cost_and_marginals(seed, 8, 8);
        let balanced = sinkhorn(&cost, &a, &b, &SinkhornConfig::new(0.1, f64::INFINITY).with_tolerance(1e-10)).unwrap();
        let cfg = SinkhornConfig::new(0.1, 1e4 * cost.max()).with_tolerance(1e-10).with_max_iterations(100_000);
        let unbalanced = unbalanced_sinkhorn(&cost, &a, &b, &cfg).unwrap();
        let (r0, c0) = balanced.marginals();
        let (r1, c1) = unbalanced.marginals();
        for (x, y) in r0.iter().chain(c0.iter()).zip(r1.iter().chain(c1.iter())) {
            prop_assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn swd_is_a_symmetric_order_free_two_homogeneous_discrepancy(
        seed in any::<u64>(), k in 1usize..12, c in 1usize..6, m in 1usize..10, s in 0.05f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (zi, zj) = (grid(&mut rng, k, c), grid(&mut rng, k, c));
        let proj = ProjectionSet::random(m, c, seed).unwrap();
        let d = swd(&zi, &zj, &proj).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, swd(&zj, &zi, &proj).unwrap());
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(d, swd(&zi.permuted(&perm).unwrap(), &zj, &proj).unwrap());
        prop_assert_eq!(d, swd(&zi, &zj.permuted(&perm).unwrap(), &proj).unwrap());
        let scale = |g: &PatchGrid| PatchGrid::new(g.patches() * s).unwrap();
        let ds = swd(&scale(&zi), &scale(&zj), &proj).unwrap();
        prop_assert!((ds - s * s * d).abs() <= 1e-9 * (s * s * d).max(f64::MIN_POSITIVE));
        prop_assert_eq!(swd(&zi, &zi, &proj).unwrap(), 0.0);
    }

    #[test]
    fn swd_gradient_matches_finite_differences_away_from_ties(seed in any::<u64>(), k in 2usize..8, c in 1usize..5, m in 1usize..6) {
        const H: f64 = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (zi, zj) = (grid(&mut rng, k, c), grid(&mut rng, k, c));
        let proj = ProjectionSet::random(m, c, seed).unwrap();
        // Skip draws where two projected patches nearly coincide.
        let min_gap = [&zi, &zj].iter().flat_map(|g| {
            let p = g.patches().dot(&proj.directions().t());
            (0..m).map(move |col| {
                let mut v = p.column(col).to_vec();
                v.sort_by(f64::total_cmp);
                v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
            }).collect::<Vec<_>>()
        }).fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 1e-3);
        let g = swd_grad(&zi, &zj, &proj).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for kk in 0..k {
            for cc in 0..c {
                let mut p = zi.patches().clone();
                p[[kk, cc]] += H;
                let up = swd(&PatchGrid::new(p.clone()).unwrap(), &zj, &proj).unwrap();
                p[[kk, cc]] -= 2.0 * H;
                let down = swd(&PatchGrid::new(p).unwrap(), &zj, &proj).unwrap();
                prop_assert!(rel(g.d_source[[kk, cc]], (up - down) / (2.0 * H)) < 1e-4);
            }
        }
    }
}

#[test]
fn uniform_weights_sum_to_one() {
    for n in 1..20 {
        assert!((uniform_weights(n).sum() - 1.0).abs() < 1e-12);
    }
}
