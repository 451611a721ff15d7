//! Sliced Wasserstein distance between patch grids.
//!
//! Each direction `theta_m` projects the `K` patch vectors of a grid to `K`
//! scalars. One-dimensional OT with a convex cost is solved by sorting, so
//! the per-direction distance is `|sort(Z_i theta_m) - sort(Z_j theta_m)|^2`
//! and the SWD is its mean over directions. The sum over the `K` sorted
//! entries is not divided by `K`.
//!
//! Gradients treat the sorting permutations as locally constant. Ties are
//! broken by original patch index (stable sort), which makes both the value
//! and the chosen subgradient deterministic.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::PatchGrid;

/// `M` projection directions of dimension `C`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    directions: Array2<f64>,
    seed: u64,
}

impl ProjectionSet {
    /// `m` Gaussian directions in `R^c`, normalized to unit length.
    pub fn random(m: usize, c: usize, seed: u64) -> Result<Self> {
        if m == 0 || c == 0 {
            return Err(Error::InvalidParameter(format!(
                "projection set needs M >= 1 and C >= 1, got M={m}, C={c}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut directions = Array2::zeros((m, c));
        for row in directions.rows_mut() {
            // Resample the (measure-zero) all-zero draw.
            loop {
                let mut norm = 0.0;
                let draw: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
                for x in &draw {
                    norm += x * x;
                }
                if norm > 0.0 {
                    let norm = norm.sqrt();
                    for (dst, x) in row.into_iter().zip(draw) {
                        *dst = x / norm;
                    }
                    break;
                }
            }
        }
        Ok(Self { directions, seed })
    }

    /// Wraps explicit directions without normalizing them.
    pub fn from_directions(directions: Array2<f64>, seed: u64) -> Result<Self> {
        if directions.nrows() == 0 || directions.ncols() == 0 {
            return Err(Error::InvalidParameter("projection set must be non-empty".into()));
        }
        if directions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("projection directions must be finite".into()));
        }
        Ok(Self { directions, seed })
    }

    pub fn directions(&self) -> &Array2<f64> {
        &self.directions
    }

    pub fn directions_mut(&mut self) -> &mut Array2<f64> {
        &mut self.directions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of directions `M`.
    pub fn len(&self) -> usize {
        self.directions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    /// Rescales every row to unit Euclidean norm (zero rows are left alone).
    pub fn normalize(&mut self) {
        for mut row in self.directions.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
    }
}

/// Squared-cost 1-D OT between two equal-size uniform point sets:
/// `sum_k (sort(x)_k - sort(y)_k)^2`.
pub fn ot_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "1-D OT needs equal counts, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    Ok(xs.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Sorted projections of one grid: for each direction, the projected values
/// in ascending order and the patch index each sorted slot came from.
#[derive(Debug, Clone)]
pub struct SortedProjections {
    /// `M x K`, rows ascending.
    pub values: Array2<f64>,
    /// `order[m][k]` is the patch index at sorted position `k`.
    pub order: Vec<Vec<usize>>,
}

impl SortedProjections {
    pub fn new(grid: &PatchGrid, proj: &ProjectionSet) -> Result<Self> {
        if grid.channels() != proj.dim() {
            return Err(Error::DimensionMismatch {
                expected: proj.dim(),
                found: grid.channels(),
            });
        }
        let projected = grid.patches().dot(&proj.directions().t()); // K x M
        let (k, m) = projected.dim();
        let mut values = Array2::zeros((m, k));
        let mut order = Vec::with_capacity(m);
        for (mi, col) in projected.columns().into_iter().enumerate() {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.sort_by(|&p, &q| col[p].total_cmp(&col[q]));
            for (slot, &p) in idx.iter().enumerate() {
                values[[mi, slot]] = col[p];
            }
            order.push(idx);
        }
        Ok(Self { values, order })
    }

    pub fn patch_count(&self) -> usize {
        self.values.ncols()
    }

    /// SWD between two pre-sorted grids.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let m = self.values.nrows() as f64;
        let total: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(total / m)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::ShapeMismatch(format!(
                "sorted projections {:?} vs {:?}",
                self.values.dim(),
                other.values.dim()
            )));
        }
        Ok(())
    }

    /// Accumulates `weight * d SWD / d(projected values)` for both grids into
    /// `self_acc` and `other_acc` (both `M x K`, indexed by original patch).
    pub fn accumulate_projection_grads(
        &self,
        other: &Self,
        weight: f64,
        self_acc: &mut Array2<f64>,
        other_acc: &mut Array2<f64>,
    ) {
        let m = self.values.nrows();
        let scale = 2.0 * weight / m as f64;
        for mi in 0..m {
            let (oi, oj) = (&self.order[mi], &other.order[mi]);
            for k in 0..self.values.ncols() {
                let d = scale * (self.values[[mi, k]] - other.values[[mi, k]]);
                self_acc[[mi, oi[k]]] += d;
                other_acc[[mi, oj[k]]] -= d;
            }
        }
    }
}

/// Sliced Wasserstein distance `(1/M) sum_m |sort(Z_i theta_m) - sort(Z_j theta_m)|^2`.
pub fn swd(zi: &PatchGrid, zj: &PatchGrid, proj: &ProjectionSet) -> Result<f64> {
    check_pair(zi, zj)?;
    let si = SortedProjections::new(zi, proj)?;
    let sj = SortedProjections::new(zj, proj)?;
    si.distance(&sj)
}

/// Value and gradients of [`swd`].
#[derive(Debug, Clone)]
pub struct SwdGrad {
    pub value: f64,
    /// `K x C`.
    pub d_source: Array2<f64>,
    /// `K x C`.
    pub d_target: Array2<f64>,
    /// `M x C`.
    pub d_directions: Array2<f64>,
}

pub fn swd_grad(zi: &PatchGrid, zj: &PatchGrid, proj: &ProjectionSet) -> Result<SwdGrad> {
    check_pair(zi, zj)?;
    let si = SortedProjections::new(zi, proj)?;
    let sj = SortedProjections::new(zj, proj)?;
    let value = si.distance(&sj)?;
    let (m, k) = si.values.dim();
    let mut gi = Array2::zeros((m, k));
    let mut gj = Array2::zeros((m, k));
    si.accumulate_projection_grads(&sj, 1.0, &mut gi, &mut gj);
    Ok(SwdGrad {
        value,
        d_source: gi.t().dot(proj.directions()),
        d_target: gj.t().dot(proj.directions()),
        d_directions: gi.dot(zi.patches()) + gj.dot(zj.patches()),
    })
}

fn check_pair(zi: &PatchGrid, zj: &PatchGrid) -> Result<()> {
    if zi.patch_count() != zj.patch_count() {
        return Err(Error::ShapeMismatch(format!(
            "patch counts differ: {} vs {}",
            zi.patch_count(),
            zj.patch_count()
        )));
    }
    if zi.channels() != zj.channels() {
        return Err(Error::DimensionMismatch {
            expected: zi.channels(),
            found: zj.channels(),
        });
    }
    Ok(())
}

/// Projects a single vector onto each direction.
pub fn project_vector(v: ArrayView1<f64>, proj: &ProjectionSet) -> Array1<f64> {
    proj.directions().dot(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid(rows: Array2<f64>) -> PatchGrid {
        PatchGrid::new(rows).unwrap()
    }

    #[test]
    fn ot_1d_examples() {
        assert_eq!(ot_1d(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 8.0);
        assert_eq!(ot_1d(&[0.5, -1.0, 2.0], &[2.0, 0.5, -1.0]).unwrap(), 0.0);
        assert_eq!(ot_1d(&[3.0, 1.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert!(ot_1d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn swd_scalar_case_reduces_to_1d() {
        let p = ProjectionSet::from_directions(array![[1.0]], 0).unwrap();
        let zi = grid(array![[0.0], [1.0]]);
        let zj = grid(array![[2.0], [3.0]]);
        assert_eq!(swd(&zi, &zj, &p).unwrap(), 8.0);
        let g = swd_grad(&zi, &zj, &p).unwrap();
        assert_eq!(g.d_source, array![[-4.0], [-4.0]]);
        assert_eq!(g.d_target, array![[4.0], [4.0]]);
        // d/dtheta = sum_k 2 (theta x_k - theta y_k)(x_k - y_k) = 2*(4 + 4)
        assert_eq!(g.d_directions, array![[16.0]]);
    }

    #[test]
    fn swd_zero_on_identical_and_permuted() {
        let p = ProjectionSet::random(8, 3, 7).unwrap();
        let zi = grid(array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5], [2.0, 0.0, -0.4]]);
        assert_eq!(swd(&zi, &zi, &p).unwrap(), 0.0);
        let zp = grid(array![[2.0, 0.0, -0.4], [0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]);
        assert_eq!(swd(&zi, &zp, &p).unwrap(), 0.0);
        let g = swd_grad(&zi, &zi, &p).unwrap();
        assert!(g.d_source.iter().chain(g.d_target.iter()).chain(g.d_directions.iter()).all(|x| *x == 0.0));
    }

    #[test]
    fn swd_rejects_mismatched_shapes() {
        let p = ProjectionSet::random(4, 2, 1).unwrap();
        let a = grid(array![[0.0, 1.0], [1.0, 0.0]]);
        let b = grid(array![[0.0, 1.0]]);
        assert!(swd(&a, &b, &p).is_err());
        let c = grid(array![[0.0, 1.0, 2.0], [1.0, 0.0, 2.0]]);
        assert!(swd(&a, &c, &p).is_err());
    }

    #[test]
    fn random_projections_have_unit_norm_and_are_seeded() {
        let p = ProjectionSet::random(16, 8, 42).unwrap();
        for row in p.directions().rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        assert_eq!(p, ProjectionSet::random(16, 8, 42).unwrap());
        assert_ne!(p, ProjectionSet::random(16, 8, 43).unwrap());
        assert!(ProjectionSet::random(0, 8, 1).is_err());
    }

    #[test]
    fn ties_break_by_patch_index() {
        let p = ProjectionSet::from_directions(array![[1.0, 0.0]], 0).unwrap();
        let z = grid(array![[1.0, 5.0], [1.0, -5.0], [0.0, 0.0]]);
        let s = SortedProjections::new(&z, &p).unwrap();
        assert_eq!(s.order[0], vec![2, 0, 1]);
    }
}
