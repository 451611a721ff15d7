use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// `K x C` matrix of local patch features: `K = H * W` spatial positions,
/// `C` channels per position.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    patches: Array2<f64>,
}

impl PatchGrid {
    pub fn new(patches: Array2<f64>) -> Result<Self> {
        let (k, c) = patches.dim();
        if k == 0 || c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "patch grid needs K >= 1 and C >= 1, got {k}x{c}"
            )));
        }
        if patches.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("patch grid has non-finite entries".into()));
        }
        Ok(Self { patches })
    }

    pub fn patches(&self) -> &Array2<f64> {
        &self.patches
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.patches
    }

    /// `K`.
    pub fn patch_count(&self) -> usize {
        self.patches.nrows()
    }

    /// `C`.
    pub fn channels(&self) -> usize {
        self.patches.ncols()
    }

    /// Global average pooling over the patches.
    pub fn mean(&self) -> Array1<f64> {
        self.patches
            .mean_axis(Axis(0))
            .expect("grid has at least one patch")
    }

    /// Reorders patches so that row `k` of the result is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.patch_count();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidParameter(format!(
                "not a permutation of {k} patches"
            )));
        }
        Ok(Self {
            patches: self.patches.select(Axis(0), perm),
        })
    }
}
