//! Exact discrete optimal transport via the transportation simplex method.
//!
//! The basis is a spanning tree over the `m + n` row/column nodes. Each pivot
//! prices every non-basic cell with the tree potentials, brings in the most
//! negative reduced cost and pushes flow around the unique tree cycle. After
//! a run of degenerate pivots the entering rule falls back to Bland's rule.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::measures::{validate_weights, CostMatrix, TransportPlan, SIMPLEX_TOL};

/// Largest side length accepted by [`exact_ot`].
pub const DEFAULT_ORACLE_CAP: usize = 64;

const DEGENERATE_RUN_LIMIT: usize = 50;

/// Exact solution with the dual potentials that certify optimality:
/// `u_i + v_j <= C_ij` everywhere, with equality on the support.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub plan: TransportPlan,
    pub row_potentials: Array1<f64>,
    pub col_potentials: Array1<f64>,
}

/// Solves `min <gamma, C>` over couplings of `a` and `b` exactly.
pub fn exact_ot(cost: &CostMatrix, a: &Array1<f64>, b: &Array1<f64>) -> Result<TransportPlan> {
    exact_ot_capped(cost, a, b, DEFAULT_ORACLE_CAP)
}

/// [`exact_ot`] with an explicit size cap.
pub fn exact_ot_capped(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    cap: usize,
) -> Result<TransportPlan> {
    exact_ot_with_duals(cost, a, b, cap).map(|s| s.plan)
}

pub fn exact_ot_with_duals(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    cap: usize,
) -> Result<ExactSolution> {
    let (m, n) = cost.shape();
    if a.len() != m || b.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "cost is {m}x{n} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let size = m.max(n);
    if size > cap {
        return Err(Error::SizeCap { size, cap });
    }
    validate_weights(a.view())?;
    validate_weights(b.view())?;
    let (sa, sb) = (a.sum(), b.sum());
    if (sa - sb).abs() > SIMPLEX_TOL {
        return Err(Error::Infeasible {
            source_mass: sa,
            target_mass: sb,
        });
    }

    let mut tableau = Tableau::northwest_corner(cost.entries(), a, b);
    let iterations = tableau.optimize();
    let (u, v) = tableau.potentials();
    let coupling = tableau.coupling();
    let plan = TransportPlan::from_coupling(coupling, cost, None, iterations, true);
    Ok(ExactSolution {
        plan,
        row_potentials: u,
        col_potentials: v,
    })
}

struct Tableau<'a> {
    cost: &'a Array2<f64>,
    m: usize,
    n: usize,
    /// Basic cells `(row, col, flow)`.
    basis: Vec<(usize, usize, f64)>,
    in_basis: Array2<bool>,
}

impl<'a> Tableau<'a> {
    fn northwest_corner(cost: &'a Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Self {
        let (m, n) = cost.dim();
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut in_basis = Array2::from_elem((m, n), false);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            basis.push((i, j, x));
            in_basis[[i, j]] = true;
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // Exactly one index advances per step, so the basis ends with
            // m + n - 1 cells and stays a spanning tree.
            let advance_row = if i == m - 1 {
                false
            } else if j == n - 1 {
                true
            } else {
                supply[i] <= demand[j]
            };
            if advance_row {
                i += 1;
            } else {
                j += 1;
            }
        }
        // Float residue from unequal totals lands on the last cell.
        if let Some(last) = basis.last_mut() {
            last.2 = last.2.max(0.0);
        }
        Self {
            cost,
            m,
            n,
            basis,
            in_basis,
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // Nodes 0..m are rows, m..m+n columns; edges carry the basis index.
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self) -> (Array1<f64>, Array1<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j, _) = self.basis[k];
                    // u_i + v_j = C_ij on basic cells.
                    pot[next] = self.cost[[i, j]] - pot[node];
                    queue.push_back(next);
                }
            }
        }
        let u = Array1::from_iter(pot[..self.m].iter().copied());
        let v = Array1::from_iter(pot[self.m..].iter().copied());
        (u, v)
    }

    /// Basis indices along the tree path from row `p` to column `q`.
    fn tree_path(&self, p: usize, q: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let target = self.m + q;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[p] = true;
        let mut queue = VecDeque::from([p]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while let Some((prev, k)) = parent[node] {
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }

    fn optimize(&mut self) -> usize {
        let scale = 1.0 + self.cost.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let tol = 1e-12 * scale;
        let max_pivots = 50 * self.m * self.n + 100;
        let mut degenerate_run = 0;
        let mut pivots = 0;
        while pivots < max_pivots {
            let (u, v) = self.potentials();
            let bland = degenerate_run >= DEGENERATE_RUN_LIMIT;
            let mut entering: Option<(usize, usize)> = None;
            let mut best = -tol;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    if self.in_basis[[i, j]] {
                        continue;
                    }
                    let r = self.cost[[i, j]] - u[i] - v[j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((p, q)) = entering else {
                break;
            };

            // Path edges alternate -, +, -, ... starting from row p; the
            // entering cell itself is +.
            let path = self.tree_path(p, q);
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let x = self.basis[k].2;
                    if x < theta || (x == theta && k < leave) {
                        theta = x;
                        leave = k;
                    }
                }
            }
            let theta = theta.max(0.0);
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[k].2 = (self.basis[k].2 - theta).max(0.0);
                } else {
                    self.basis[k].2 += theta;
                }
            }
            let (li, lj, _) = self.basis[leave];
            self.in_basis[[li, lj]] = false;
            self.in_basis[[p, q]] = true;
            self.basis[leave] = (p, q, theta);

            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
            pivots += 1;
        }
        if pivots == max_pivots {
            log::warn!("transportation simplex hit its pivot limit ({max_pivots})");
        }
        pivots
    }

    fn coupling(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.m, self.n));
        for &(i, j, x) in &self.basis {
            g[[i, j]] = x;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::uniform_weights;
    use ndarray::array;

    #[test]
    fn two_by_two_hand_solution() {
        // One free variable t = gamma_00 in [0.1, 0.4]; cost = t*0 + (0.7-t) + (0.4-t) + (t-0.1)*0
        // = 1.1 - 2t, minimized at t = 0.4 with value 0.3.
        let cost = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let plan = exact_ot(&cost, &array![0.7, 0.3], &array![0.4, 0.6]).unwrap();
        assert!((plan.transport_value - 0.3).abs() < 1e-12);
        let expected = array![[0.4, 0.3], [0.0, 0.3]];
        for (x, y) in plan.coupling.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_supports_cost_zero() {
        let cost = CostMatrix::new(array![[0.0, 2.0, 5.0], [2.0, 0.0, 1.0], [5.0, 1.0, 0.0]]).unwrap();
        let w = uniform_weights(3);
        let plan = exact_ot(&cost, &w, &w).unwrap();
        assert_eq!(plan.transport_value, 0.0);
    }

    #[test]
    fn singleton() {
        let cost = CostMatrix::new(array![[2.5]]).unwrap();
        let plan = exact_ot(&cost, &array![1.0], &array![1.0]).unwrap();
        assert_eq!(plan.transport_value, 2.5);
        assert_eq!(plan.coupling, array![[1.0]]);
    }

    #[test]
    fn rejects_oversize_and_infeasible() {
        let cost = CostMatrix::new(Array2::zeros((3, 3))).unwrap();
        let w = uniform_weights(3);
        assert!(matches!(
            exact_ot_capped(&cost, &w, &w, 2),
            Err(Error::SizeCap { size: 3, cap: 2 })
        ));
        assert!(matches!(
            exact_ot(&cost, &w, &array![0.5, 0.5, 0.5]),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn zero_weight_rows_get_zero_mass() {
        let cost = CostMatrix::new(array![[1.0, 2.0], [0.5, 0.1], [3.0, 0.0]]).unwrap();
        let plan = exact_ot(&cost, &array![0.5, 0.0, 0.5], &array![0.5, 0.5]).unwrap();
        assert_eq!(plan.coupling.row(1).sum(), 0.0);
        assert!((plan.transport_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duals_certify_optimality() {
        let cost = CostMatrix::new(array![
            [3.0, 1.0, 4.0, 1.5],
            [5.0, 9.0, 2.0, 6.0],
            [5.0, 3.0, 5.0, 8.0]
        ])
        .unwrap();
        let a = array![0.2, 0.5, 0.3];
        let b = array![0.1, 0.4, 0.25, 0.25];
        let sol = exact_ot_with_duals(&cost, &a, &b, 8).unwrap();
        let (u, v) = (&sol.row_potentials, &sol.col_potentials);
        for ((i, j), c) in cost.entries().indexed_iter() {
            assert!(u[i] + v[j] <= c + 1e-12);
            if sol.plan.coupling[[i, j]] > 1e-15 {
                assert!((u[i] + v[j] - c).abs() < 1e-12);
            }
        }
        let dual = u.dot(&a) + v.dot(&b);
        assert!((dual - sol.plan.transport_value).abs() < 1e-12);
    }
}
