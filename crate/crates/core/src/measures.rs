//! Empirical measures, cost matrices and transport plans.
//!
//! All three types are immutable once built: constructors validate their
//! invariants and solvers always hand back fresh [`TransportPlan`]s.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Tolerance used when checking that weights lie on the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Weighted point cloud `sum_i w_i delta_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from an `n x d` point matrix and `n` nonnegative weights.
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyMeasure);
        }
        if weights.len() != points.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        validate_weights(weights.view())?;
        Ok(Self { points, weights })
    }

    /// Uniform empirical measure over `points` (weights `1/n`).
    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let d = points.first().ok_or(Error::EmptyMeasure)?.len();
        let mut flat = Vec::with_capacity(n * d);
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        let points = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self {
            points,
            weights: uniform_weights(n),
        })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.sum()
    }

    /// True when the weights sum to one within [`SIMPLEX_TOL`].
    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= SIMPLEX_TOL
    }

    /// Indices of support points carrying zero mass.
    pub fn zero_weight_points(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Uniform weight vector `[1/n; n]`.
pub fn uniform_weights(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

/// Convenience wrapper over [`DiscreteMeasure::uniform`].
pub fn make_uniform_measure(points: &[Vec<f64>]) -> Result<DiscreteMeasure> {
    DiscreteMeasure::uniform(points)
}

pub(crate) fn validate_weights(w: ArrayView1<f64>) -> Result<()> {
    if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidWeights(format!(
            "weight {i} is {x}; weights must be finite and nonnegative"
        )));
    }
    Ok(())
}

pub(crate) fn validate_simplex(w: ArrayView1<f64>) -> Result<()> {
    validate_weights(w)?;
    let s = w.sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {s}, expected 1"
        )));
    }
    Ok(())
}

/// Nonnegative, finite `n_s x n_t` ground-cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidCost("empty cost matrix".into()));
        }
        if let Some(((i, j), c)) = entries
            .indexed_iter()
            .find(|(_, c)| !c.is_finite() || **c < 0.0)
        {
            return Err(Error::InvalidCost(format!(
                "entry ({i}, {j}) is {c}; costs must be finite and nonnegative"
            )));
        }
        Ok(Self(entries))
    }

    /// Builds a cost matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * m);
        for r in rows {
            if r.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        let a = Array2::from_shape_vec((n, m), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(a)
    }

    /// Pairwise squared Euclidean distances between the supports of two measures.
    pub fn squared_euclidean(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Result<Self> {
        pairwise_sq_euclidean(source.points(), target.points()).map(Self)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

/// `D[i, j] = |x_i - y_j|^2`, computed entrywise (no Gram-matrix trick) so
/// that identical rows give exact zeros.
pub fn pairwise_sq_euclidean(x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: y.ncols(),
        });
    }
    let mut d = Array2::zeros((x.nrows(), y.nrows()));
    for (i, xi) in x.outer_iter().enumerate() {
        for (j, yj) in y.outer_iter().enumerate() {
            d[[i, j]] = xi.iter().zip(yj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    Ok(d)
}

/// Frobenius inner product `<A, B>`.
pub fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// A coupling matrix together with solver metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    /// `<coupling, C>` against the cost the plan was solved for.
    pub transport_value: f64,
    /// Value of the objective the solver actually minimized. Equals
    /// `transport_value` for exact OT, adds `eps * KL(coupling | a x b)` for
    /// entropic OT and the marginal penalties for unbalanced OT.
    pub objective_value: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

impl TransportPlan {
    pub(crate) fn from_coupling(
        coupling: Array2<f64>,
        cost: &CostMatrix,
        objective_value: Option<f64>,
        iterations_used: usize,
        converged: bool,
    ) -> Self {
        let transport_value = frobenius(&coupling, cost.entries());
        Self {
            coupling,
            transport_value,
            objective_value: objective_value.unwrap_or(transport_value),
            iterations_used,
            converged,
        }
    }

    /// Row and column sums of the coupling.
    pub fn marginals(&self) -> (Array1<f64>, Array1<f64>) {
        plan_marginals(&self.coupling)
    }

    /// Largest absolute deviation of the plan's marginals from `(a, b)`.
    pub fn marginal_deviation(&self, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let (r, c) = self.marginals();
        let dr = (&r - a).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let dc = (&c - b).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        dr.max(dc)
    }

    pub fn total_mass(&self) -> f64 {
        self.coupling.sum()
    }
}

/// `(coupling 1, coupling^T 1)`.
pub fn plan_marginals(coupling: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    (coupling.sum_axis(Axis(1)), coupling.sum_axis(Axis(0)))
}
