//! Learning-rate annealing and momentum SGD.

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::solvers::ProjectionSet;

/// `lr(q) = chi0 / (1 + mu q)^nu` for training progress `q` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub chi0: f64,
    pub mu: f64,
    pub nu: f64,
    /// Classifier rate relative to the embedder rate.
    pub classifier_multiplier: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            chi0: 0.01,
            mu: 10.0,
            nu: 0.75,
            classifier_multiplier: 10.0,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi0 > 0.0) || !(self.mu >= 0.0) || !(self.nu >= 0.0) || !(self.classifier_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "lr schedule needs chi0 > 0, mu >= 0, nu >= 0, classifier_multiplier > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Embedder learning rate at progress `q`.
    pub fn lr_at(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidParameter(format!("progress q must lie in [0, 1], got {q}")));
        }
        Ok(self.chi0 / (1.0 + self.mu * q).powf(self.nu))
    }

    pub fn classifier_lr_at(&self, q: f64) -> Result<f64> {
        Ok(self.classifier_multiplier * self.lr_at(q)?)
    }
}

/// Free-function form of [`LrSchedule::lr_at`].
pub fn lr_at(schedule: &LrSchedule, q: f64) -> Result<f64> {
    schedule.lr_at(q)
}

/// One momentum-SGD update of a flat tensor:
/// `v <- momentum v + (g + wd w)`, `w <- w - lr v`.
pub fn sgd_step(w: &mut [f64], g: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if w.len() != g.len() || w.len() != velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "sgd step on {} params with {} grads and {} velocity entries",
            w.len(),
            g.len(),
            velocity.len()
        )));
    }
    for ((w, g), v) in w.iter_mut().zip(g).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *w;
        *w -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over a whole model plus its projection directions.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<ModelParams>,
    proj_velocity: Option<ndarray::Array2<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: None,
            proj_velocity: None,
        }
    }

    /// Updates the model; classifier tensors use `classifier_lr`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, classifier_lr: f64) -> Result<()> {
        if grads.dims != params.dims {
            return Err(Error::ShapeMismatch("gradient dims differ from parameter dims".into()));
        }
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        let grad_tensors = grads.tensors();
        for (((name, w), (_, v)), (_, _, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors_mut())
            .zip(grad_tensors)
        {
            let rate = if name.starts_with("classifier") { classifier_lr } else { lr };
            sgd_step(w, g, v, rate, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }

    /// Updates projection directions, renormalizing rows when asked.
    pub fn step_projections(
        &mut self,
        proj: &mut ProjectionSet,
        grad: &ndarray::Array2<f64>,
        lr: f64,
        renormalize: bool,
    ) -> Result<()> {
        if grad.dim() != proj.directions().dim() {
            return Err(Error::ShapeMismatch("projection gradient shape".into()));
        }
        let v = self
            .proj_velocity
            .get_or_insert_with(|| ndarray::Array2::zeros(grad.raw_dim()));
        let w = proj.directions_mut();
        sgd_step(
            w.as_slice_mut().expect("standard layout"),
            grad.as_slice().expect("standard layout"),
            v.as_slice_mut().expect("standard layout"),
            lr,
            self.momentum,
            0.0,
        )?;
        if renormalize {
            proj.normalize();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0.0).unwrap(), 0.01);
        let end = s.lr_at(1.0).unwrap();
        assert_eq!(end, 0.01 / 11f64.powf(0.75));
        assert!((end - 1.6560e-3).abs() < 1e-6, "{end}");
        assert!((s.classifier_lr_at(0.0).unwrap() - 0.1).abs() < 1e-15);
        let flat = LrSchedule { mu: 0.0, ..s };
        for q in [0.0, 0.3, 1.0] {
            assert_eq!(flat.lr_at(q).unwrap(), 0.01);
        }
        assert!(s.lr_at(1.5).is_err());
        assert!(s.lr_at(-0.1).is_err());
    }

    #[test]
    fn vanilla_and_momentum_steps() {
        let mut w = [1.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-15);

        let mut w = [0.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        let before = w[0];
        sgd_step(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!(((before - w[0]) - 0.19).abs() < 1e-15);

        assert!(sgd_step(&mut [0.0, 1.0], &[1.0], &mut [0.0, 0.0], 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let mut p = ModelParams::init(ModelDims::default(), 3).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step(&mut p, &g, 0.1, 1.0).unwrap();
        opt.step(&mut p, &g, 0.1, 1.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn projection_step_renormalizes() {
        let mut proj = ProjectionSet::random(4, 3, 1).unwrap();
        let g = ndarray::Array2::from_elem((4, 3), 0.7);
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step_projections(&mut proj, &g, 0.5, true).unwrap();
        for r in proj.directions().rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
        let mut raw = ProjectionSet::random(4, 3, 1).unwrap();
        opt.step_projections(&mut raw, &g, 0.5, false).unwrap();
        assert!(raw.directions().rows().into_iter().any(|r| (r.dot(&r) - 1.0).abs() > 1e-3));
    }
}
