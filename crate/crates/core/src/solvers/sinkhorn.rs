//! Entropic and unbalanced optimal transport by matrix scaling.
//!
//! Both solvers use the product of the marginals as the entropic reference
//! measure, so the Gibbs kernel is `K_ij = a_i b_j exp(-C_ij / eps)` and the
//! plan is `diag(u) K diag(v)`. The unbalanced variant replaces the hard
//! marginal constraints by `tau * KL` penalties, which turns the scaling
//! updates into `u = (a / K v)^(tau / (tau + eps))`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{validate_simplex, validate_weights, CostMatrix, TransportPlan};
use crate::solvers::exact::exact_ot;

/// How often (in iterations) the convergence test runs.
pub const CHECK_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    /// Entropic regularization `eps`.
    pub epsilon: f64,
    /// Marginal penalization `tau` (unbalanced solver only). `inf` recovers
    /// the balanced problem.
    pub tau: f64,
    pub max_iterations: usize,
    /// Threshold on the max absolute change of the log scaling vectors.
    pub tolerance: f64,
    pub log_domain: bool,
    /// Warm-start from a decreasing sequence of regularizations ending at
    /// `epsilon` (log domain only). Same fixed point, far fewer iterations
    /// when `epsilon` is small relative to the costs.
    pub epsilon_scaling: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            tau: 1.0,
            max_iterations: 1000,
            tolerance: 1e-6,
            log_domain: true,
            epsilon_scaling: false,
        }
    }
}

impl SinkhornConfig {
    pub fn new(epsilon: f64, tau: f64) -> Self {
        Self {
            epsilon,
            tau,
            ..Self::default()
        }
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn with_log_domain(mut self, on: bool) -> Self {
        self.log_domain = on;
        self
    }

    pub fn with_epsilon_scaling(mut self, on: bool) -> Self {
        self.epsilon_scaling = on;
        self
    }

    /// Checks the parameter ranges. `epsilon == 0` is accepted here; the
    /// balanced solver routes it to the exact solver.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Balanced entropic OT. `eps == 0` is solved exactly instead.
///
/// A run that exhausts `max_iterations` comes back with `converged == false`.
pub fn sinkhorn(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    check_shapes(cost, a, b)?;
    validate_simplex(a.view())?;
    validate_simplex(b.view())?;
    if cfg.epsilon == 0.0 {
        return exact_ot(cost, a, b);
    }
    let (coupling, iters, converged) = scale(cost, a, b, cfg.epsilon, f64::INFINITY, cfg)?;
    let kl = kl_to_product(&coupling, a, b);
    let objective = crate::measures::frobenius(&coupling, cost.entries()) + cfg.epsilon * kl;
    Ok(TransportPlan::from_coupling(
        coupling,
        cost,
        Some(objective),
        iters,
        converged,
    ))
}

/// Unbalanced entropic OT with KL marginal penalties:
/// `<g, C> + eps KL(g | a x b) + tau (KL(g 1 | a) + KL(g^T 1 | b))`.
pub fn unbalanced_sinkhorn(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    check_shapes(cost, a, b)?;
    validate_weights(a.view())?;
    validate_weights(b.view())?;
    if a.sum() <= 0.0 || b.sum() <= 0.0 {
        return Err(Error::InvalidWeights(
            "unbalanced OT needs positive total mass on both sides".into(),
        ));
    }
    if cfg.epsilon == 0.0 {
        return Err(Error::InvalidParameter(
            "unbalanced OT requires epsilon > 0".into(),
        ));
    }
    let (coupling, iters, converged) = scale(cost, a, b, cfg.epsilon, cfg.tau, cfg)?;
    let objective = unbalanced_objective(&coupling, cost, a, b, cfg.epsilon, cfg.tau);
    Ok(TransportPlan::from_coupling(
        coupling,
        cost,
        Some(objective),
        iters,
        converged,
    ))
}

/// Full unbalanced objective of `coupling` against `cost`.
pub fn unbalanced_objective(
    coupling: &Array2<f64>,
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    epsilon: f64,
    tau: f64,
) -> f64 {
    let (r, c) = crate::measures::plan_marginals(coupling);
    let transport = crate::measures::frobenius(coupling, cost.entries());
    let penalty = if tau.is_infinite() {
        0.0
    } else {
        tau * (kl_div(&r, a) + kl_div(&c, b))
    };
    transport + epsilon * kl_to_product(coupling, a, b) + penalty
}

/// Generalized KL divergence `sum p log(p/q) - p + q` with `0 log 0 = 0`.
pub fn kl_div(p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    p.iter().zip(q.iter()).map(|(&p, &q)| kl_term(p, q)).sum()
}

/// `KL(g | a x b)` in the generalized sense.
pub fn kl_to_product(g: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let mut s = 0.0;
    for ((i, j), &p) in g.indexed_iter() {
        s += kl_term(p, a[i] * b[j]);
    }
    s
}

fn kl_term(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * (p / q).ln() - p + q
    } else {
        q
    }
}

fn check_shapes(cost: &CostMatrix, a: &Array1<f64>, b: &Array1<f64>) -> Result<()> {
    let (m, n) = cost.shape();
    if a.len() != m || b.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "cost is {m}x{n} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Stable `log sum exp`; returns `-inf` when every term is `-inf`.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(xs: I) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Exponent of the scaling updates; 1 for hard marginals.
fn damping(tau: f64, eps: f64) -> f64 {
    if tau.is_infinite() {
        1.0
    } else {
        tau / (tau + eps)
    }
}

fn scale(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    tau: f64,
    cfg: &SinkhornConfig,
) -> Result<(Array2<f64>, usize, bool)> {
    if cfg.log_domain {
        Ok(scale_log(cost, a, b, eps, tau, cfg))
    } else {
        scale_naive(cost, a, b, eps, damping(tau, eps), cfg)
    }
}

/// Convergence threshold of the intermediate stages of epsilon scaling.
const STAGE_TOLERANCE: f64 = 1e-3;

/// Regularizations visited by epsilon scaling: halving from the largest cost
/// down to `eps`.
fn epsilon_schedule(cost: &CostMatrix, eps: f64, scaling: bool) -> Vec<f64> {
    let mut out = Vec::new();
    if scaling {
        let mut e = cost.max();
        while e > 2.0 * eps {
            out.push(e);
            e *= 0.5;
        }
    }
    out.push(eps);
    out
}

fn scale_log(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    tau: f64,
    cfg: &SinkhornConfig,
) -> (Array2<f64>, usize, bool) {
    let (m, n) = cost.shape();
    let log_a = a.mapv(f64::ln);
    let log_b = b.mapv(f64::ln);
    // Dual potentials `f = e log u`, `g = e log v`, carried across stages.
    let mut f = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);
    let mut iters = 0;
    let mut converged = false;
    let schedule = epsilon_schedule(cost, eps, cfg.epsilon_scaling);
    let mut buf = vec![0.0; m.max(n)];

    for (stage, &e) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let tolerance = if last { cfg.tolerance } else { STAGE_TOLERANCE.max(cfg.tolerance) };
        let exponent = damping(tau, e);
        let log_k = Array2::from_shape_fn((m, n), |(i, j)| log_a[i] + log_b[j] - cost.entries()[[i, j]] / e);
        let mut lu = f.mapv(|x| x / e);
        let mut lv = g.mapv(|x| x / e);
        let mut prev_u = lu.clone();
        let mut prev_v = lv.clone();
        let mut stage_iters = 0;
        converged = false;

        while iters < cfg.max_iterations {
            for i in 0..m {
                if a[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    buf[j] = log_k[[i, j]] + lv[j];
                }
                lu[i] = exponent * (log_a[i] - log_sum_exp(buf[..n].iter().copied()));
            }
            for j in 0..n {
                if b[j] == 0.0 {
                    continue;
                }
                for i in 0..m {
                    buf[i] = log_k[[i, j]] + lu[i];
                }
                lv[j] = exponent * (log_b[j] - log_sum_exp(buf[..m].iter().copied()));
            }
            iters += 1;
            stage_iters += 1;
            if stage_iters % CHECK_EVERY == 0 || iters == cfg.max_iterations {
                let du = max_abs_diff(&lu, &prev_u);
                let dv = max_abs_diff(&lv, &prev_v);
                if du.max(dv) < tolerance {
                    converged = true;
                    break;
                }
                prev_u.assign(&lu);
                prev_v.assign(&lv);
            }
        }
        f = lu.mapv(|x| x * e);
        g = lv.mapv(|x| x * e);
        if !last && iters >= cfg.max_iterations {
            // Out of budget before reaching the target regularization.
            converged = false;
            break;
        }
    }
    let coupling = Array2::from_shape_fn((m, n), |(i, j)| {
        if a[i] == 0.0 || b[j] == 0.0 {
            0.0
        } else {
            ((f[i] + g[j] - cost.entries()[[i, j]]) / eps + log_a[i] + log_b[j]).exp()
        }
    });
    (coupling, iters, converged)
}

fn scale_naive(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    exponent: f64,
    cfg: &SinkhornConfig,
) -> Result<(Array2<f64>, usize, bool)> {
    let (m, n) = cost.shape();
    let k = Array2::from_shape_fn((m, n), |(i, j)| {
        a[i] * b[j] * (-cost.entries()[[i, j]] / eps).exp()
    });
    let mut u = Array1::<f64>::ones(m);
    let mut v = Array1::<f64>::ones(n);
    let mut prev_u = u.mapv(f64::ln);
    let mut prev_v = v.mapv(f64::ln);
    let mut converged = false;
    let mut iters = 0;
    let breakdown = || {
        Error::Numerical(format!(
            "scaling vectors left the representable range at eps = {eps}; use the log-domain solver"
        ))
    };

    while iters < cfg.max_iterations {
        let kv = k.dot(&v);
        for i in 0..m {
            u[i] = if a[i] == 0.0 { 0.0 } else { (a[i] / kv[i]).powf(exponent) };
        }
        let ktu = k.t().dot(&u);
        for j in 0..n {
            v[j] = if b[j] == 0.0 { 0.0 } else { (b[j] / ktu[j]).powf(exponent) };
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(breakdown());
        }
        iters += 1;
        if iters % CHECK_EVERY == 0 || iters == cfg.max_iterations {
            let lu = u.mapv(f64::ln);
            let lv = v.mapv(f64::ln);
            if max_abs_diff(&lu, &prev_u).max(max_abs_diff(&lv, &prev_v)) < cfg.tolerance {
                converged = true;
                break;
            }
            prev_u = lu;
            prev_v = lv;
        }
    }
    let coupling = Array2::from_shape_fn((m, n), |(i, j)| u[i] * k[[i, j]] * v[j]);
    if coupling.iter().any(|x| !x.is_finite()) {
        return Err(breakdown());
    }
    Ok((coupling, iters, converged))
}

/// Max absolute difference, treating two equal infinities as no change.
fn max_abs_diff(x: &Array1<f64>, y: &Array1<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(p, q)| if p == q { 0.0 } else { (p - q).abs() })
        .fold(0.0, f64::max)
}
