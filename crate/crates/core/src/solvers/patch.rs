//! Exact image-level OT between two patch grids under squared Euclidean cost.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measures::{pairwise_sq_euclidean, uniform_weights, CostMatrix};
use crate::model::PatchGrid;
use crate::solvers::exact::{exact_ot_capped, DEFAULT_ORACLE_CAP};

/// Exact OT value between the uniform (`1/K`) patch measures of two grids.
pub fn exact_patch_ot(zi: &PatchGrid, zj: &PatchGrid) -> Result<f64> {
    exact_patch_ot_grad(zi, zj).map(|g| g.value)
}

#[derive(Debug, Clone)]
pub struct PatchOtGrad {
    pub value: f64,
    pub coupling: Array2<f64>,
    pub d_source: Array2<f64>,
    pub d_target: Array2<f64>,
}

/// Value and gradient of [`exact_patch_ot`] with the optimal coupling held fixed.
pub fn exact_patch_ot_grad(zi: &PatchGrid, zj: &PatchGrid) -> Result<PatchOtGrad> {
    let k = zi.patch_count();
    if zj.patch_count() != k {
        return Err(Error::ShapeMismatch(format!(
            "patch counts differ: {k} vs {}",
            zj.patch_count()
        )));
    }
    let cost = CostMatrix::new(pairwise_sq_euclidean(zi.patches(), zj.patches())?)?;
    let w = uniform_weights(k);
    let plan = exact_ot_capped(&cost, &w, &w, DEFAULT_ORACLE_CAP)?;
    let g = &plan.coupling;
    let row_mass = g.sum_axis(ndarray::Axis(1));
    let col_mass = g.sum_axis(ndarray::Axis(0));
    // d/dz_i^u = 2 sum_v g_uv (z_i^u - z_j^v)
    let mut d_source = zi.patches() * &row_mass.view().insert_axis(ndarray::Axis(1));
    d_source -= &g.dot(zj.patches());
    d_source *= 2.0;
    let mut d_target = zj.patches() * &col_mass.view().insert_axis(ndarray::Axis(1));
    d_target -= &g.t().dot(zi.patches());
    d_target *= 2.0;
    Ok(PatchOtGrad {
        value: plan.transport_value,
        coupling: plan.coupling,
        d_source,
        d_target,
    })
}
