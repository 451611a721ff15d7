//! Hierarchical OT: image-level distances nested inside a domain-level
//! mini-batch OT problem.
//!
//! For a source sample `(z_i, y_i)` and a target sample `z_j` (both already
//! embedded patch grids) the ground cost is
//!
//! ```text
//! C_ij = eta1 * SWD(z_i, z_j) + eta2 * |mean(z_i) - mean(z_j)|^2 + eta3 * CE(y_i, f(mean(z_j)))
//! ```
//!
//! The domain-level plan is solved on that matrix, frozen, and the training
//! loss `CE(source) + <plan, C>` is differentiated through the cost matrix
//! only.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{frobenius, uniform_weights, CostMatrix, TransportPlan};
use crate::model::{
    cross_entropy, cross_entropy_logit_grad, Classifier, EmbedCache, ModelParams, PatchGrid,
};
use crate::solvers::{
    exact_ot, exact_patch_ot, exact_patch_ot_grad, sinkhorn, unbalanced_sinkhorn, ProjectionSet,
    SinkhornConfig, SortedProjections,
};

/// Which image-level OT fills the first ground-cost term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageOt {
    /// Sliced Wasserstein distance over the learnable projections.
    #[default]
    Swd,
    /// Exact patch-level OT (uniform `1/K` weights).
    Exact,
}

/// Trade-off weights of the three ground-cost terms plus the projections.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundCostParams {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub proj: ProjectionSet,
    pub image_ot: ImageOt,
}

impl GroundCostParams {
    pub fn new(eta1: f64, eta2: f64, eta3: f64, proj: ProjectionSet) -> Result<Self> {
        let p = Self {
            eta1,
            eta2,
            eta3,
            proj,
            image_ot: ImageOt::Swd,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_image_ot(mut self, image_ot: ImageOt) -> Self {
        self.image_ot = image_ot;
        self
    }

    /// Weights must be nonnegative with at least one of them positive.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2), ("eta3", self.eta3)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.any_active() {
            return Err(Error::InvalidParameter("at least one ground-cost weight must be positive".into()));
        }
        Ok(())
    }

    pub fn any_active(&self) -> bool {
        self.eta1 > 0.0 || self.eta2 > 0.0 || self.eta3 > 0.0
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.eta1, self.eta2, self.eta3]
    }
}

/// The three unweighted ground-cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermTriple {
    /// Image-level OT between the patch grids.
    pub image_ot: f64,
    /// Squared distance between the pooled embeddings.
    pub pooled: f64,
    /// Cross-entropy of the target prediction against the source label.
    pub semantic: f64,
}

impl TermTriple {
    pub fn weighted(&self, w: [f64; 3]) -> f64 {
        w[0] * self.image_ot + w[1] * self.pooled + w[2] * self.semantic
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.image_ot, self.pooled, self.semantic]
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::InvalidParameter(format!(
            "class index {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Ground cost between one labeled source grid and one target grid.
pub fn ground_cost<F: Classifier + ?Sized>(
    src: (&PatchGrid, usize),
    tgt: &PatchGrid,
    params: &GroundCostParams,
    classifier: &F,
) -> Result<(f64, TermTriple)> {
    let (zi, label) = src;
    check_label(label, classifier.class_count())?;
    if zi.patch_count() != tgt.patch_count() || zi.channels() != tgt.channels() {
        return Err(Error::ShapeMismatch(format!(
            "grids {}x{} and {}x{}",
            zi.patch_count(),
            zi.channels(),
            tgt.patch_count(),
            tgt.channels()
        )));
    }
    let image_ot = match params.image_ot {
        ImageOt::Swd => {
            let si = SortedProjections::new(zi, &params.proj)?;
            let sj = SortedProjections::new(tgt, &params.proj)?;
            si.distance(&sj)?
        }
        ImageOt::Exact => exact_patch_ot(zi, tgt)?,
    };
    let (pi, pj) = (zi.mean(), tgt.mean());
    let pooled = sq_dist(pi.view(), pj.view());
    let probs = classifier.predict_proba(pj.view());
    let semantic = cross_entropy(probs.view(), label);
    let terms = TermTriple {
        image_ot,
        pooled,
        semantic,
    };
    Ok((terms.weighted(params.weights()), terms))
}

/// Ground-cost matrix plus its `n_s x n_t x 3` decomposition.
#[derive(Debug, Clone)]
pub struct CostBreakdown {
    pub cost: CostMatrix,
    /// Unweighted terms; `[.., .., 0]` image OT, `1` pooled, `2` semantic.
    /// Terms whose weight is zero are not evaluated and stored as 0.
    pub terms: Array3<f64>,
}

impl CostBreakdown {
    /// Mean of each raw term over all pairs.
    pub fn mean_terms(&self) -> [f64; 3] {
        let (n, m, _) = self.terms.dim();
        let count = (n * m) as f64;
        let mut out = [0.0; 3];
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.terms.index_axis(ndarray::Axis(2), t).sum() / count;
        }
        out
    }
}

/// Evaluates the ground cost for every (source, target) pair.
pub fn build_cost_matrix<F: Classifier + ?Sized>(
    src_batch: &[(PatchGrid, usize)],
    tgt_batch: &[PatchGrid],
    params: &GroundCostParams,
    classifier: &F,
) -> Result<CostBreakdown> {
    if src_batch.is_empty() || tgt_batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let src: Vec<&PatchGrid> = src_batch.iter().map(|(g, _)| g).collect();
    let labels: Vec<usize> = src_batch.iter().map(|(_, y)| *y).collect();
    let tgt: Vec<&PatchGrid> = tgt_batch.iter().collect();
    let feats = BatchFeatures::compute(&src, &tgt, params, |pooled| classifier.predict_proba(pooled))?;
    feats.cost_matrix(&labels, classifier.class_count(), params)
}

/// Per-sample quantities shared by all pairs of a batch.
struct BatchFeatures<'a> {
    src: Vec<&'a PatchGrid>,
    tgt: Vec<&'a PatchGrid>,
    src_pooled: Vec<Array1<f64>>,
    tgt_pooled: Vec<Array1<f64>>,
    tgt_probs: Vec<Array1<f64>>,
    src_sorted: Vec<SortedProjections>,
    tgt_sorted: Vec<SortedProjections>,
}

impl<'a> BatchFeatures<'a> {
    fn compute(
        src: &[&'a PatchGrid],
        tgt: &[&'a PatchGrid],
        params: &GroundCostParams,
        predict: impl Fn(ArrayView1<f64>) -> Array1<f64>,
    ) -> Result<Self> {
        let shape = (src[0].patch_count(), src[0].channels());
        if let Some(g) = src
            .iter()
            .chain(tgt.iter())
            .find(|g| (g.patch_count(), g.channels()) != shape)
        {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} in a batch of {}x{} grids",
                g.patch_count(),
                g.channels(),
                shape.0,
                shape.1
            )));
        }
        let sorted = |gs: &[&PatchGrid]| -> Result<Vec<SortedProjections>> {
            if params.eta1 > 0.0 && params.image_ot == ImageOt::Swd {
                gs.iter().map(|g| SortedProjections::new(g, &params.proj)).collect()
            } else {
                Ok(Vec::new())
            }
        };
        let tgt_pooled: Vec<Array1<f64>> = tgt.iter().map(|g| g.mean()).collect();
        let tgt_probs = tgt_pooled.iter().map(|p| predict(p.view())).collect();
        Ok(Self {
            src_pooled: src.iter().map(|g| g.mean()).collect(),
            tgt_pooled,
            tgt_probs,
            src_sorted: sorted(src)?,
            tgt_sorted: sorted(tgt)?,
            src: src.to_vec(),
            tgt: tgt.to_vec(),
        })
    }

    fn cost_matrix(&self, labels: &[usize], classes: usize, params: &GroundCostParams) -> Result<CostBreakdown> {
        let (ns, nt) = (self.src.len(), self.tgt.len());
        if labels.len() != ns {
            return Err(Error::ShapeMismatch(format!("{ns} source grids but {} labels", labels.len())));
        }
        for &y in labels {
            check_label(y, classes)?;
        }
        let w = params.weights();
        let mut cost = Array2::zeros((ns, nt));
        let mut terms = Array3::zeros((ns, nt, 3));
        for i in 0..ns {
            for j in 0..nt {
                let mut t = TermTriple::default();
                if w[0] > 0.0 {
                    t.image_ot = match params.image_ot {
                        ImageOt::Swd => self.src_sorted[i].distance(&self.tgt_sorted[j])?,
                        ImageOt::Exact => exact_patch_ot(self.src[i], self.tgt[j])?,
                    };
                }
                if w[1] > 0.0 {
                    t.pooled = sq_dist(self.src_pooled[i].view(), self.tgt_pooled[j].view());
                }
                if w[2] > 0.0 {
                    t.semantic = cross_entropy(self.tgt_probs[j].view(), labels[i]);
                }
                cost[[i, j]] = t.weighted(w);
                for (k, v) in t.as_array().into_iter().enumerate() {
                    terms[[i, j, k]] = v;
                }
            }
        }
        Ok(CostBreakdown {
            cost: CostMatrix::new(cost)?,
            terms,
        })
    }
}

/// Domain-level coupling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSolver {
    /// Exact balanced OT (network-simplex LP).
    Exact,
    /// Balanced entropic Sinkhorn.
    Balanced,
    /// Unbalanced entropic Sinkhorn with KL marginal penalties.
    #[default]
    Unbalanced,
    /// No domain-level matching: the plan is fixed to the product of the
    /// uniform marginals, so every pair is weighted `1/(n_s n_t)`.
    Product,
}

/// Unbalanced domain-level OT with uniform mini-batch marginals.
pub fn domain_distance(cost: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (ns, nt) = cost.shape();
    if ns != nt {
        return Err(Error::ShapeMismatch(format!(
            "domain-level cost must be square, got {ns}x{nt}"
        )));
    }
    unbalanced_sinkhorn(cost, &uniform_weights(ns), &uniform_weights(nt), cfg)
}

/// Solves the domain-level problem with the chosen strategy.
pub fn solve_domain(cost: &CostMatrix, solver: DomainSolver, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (ns, nt) = cost.shape();
    let (a, b) = (uniform_weights(ns), uniform_weights(nt));
    match solver {
        DomainSolver::Exact => exact_ot(cost, &a, &b),
        DomainSolver::Balanced => sinkhorn(cost, &a, &b, cfg),
        DomainSolver::Unbalanced => domain_distance(cost, cfg),
        DomainSolver::Product => {
            let coupling = Array2::from_elem((ns, nt), 1.0 / (ns * nt) as f64);
            let value = frobenius(&coupling, cost.entries());
            Ok(TransportPlan {
                coupling,
                transport_value: value,
                objective_value: value,
                iterations_used: 0,
                converged: true,
            })
        }
    }
}

/// Cost matrix, its decomposition and the domain-level plan.
#[derive(Debug, Clone)]
pub struct HotResult {
    pub cost_matrix: CostMatrix,
    pub per_term_costs: Array3<f64>,
    pub plan: TransportPlan,
    /// Objective value of `plan` against `cost_matrix`.
    pub hot_value: f64,
}

/// Builds the cost matrix between embedded batches and solves the domain-level problem.
pub fn hierarchical_distance<F: Classifier + ?Sized>(
    src_batch: &[(PatchGrid, usize)],
    tgt_batch: &[PatchGrid],
    params: &GroundCostParams,
    classifier: &F,
    solver: DomainSolver,
    cfg: &SinkhornConfig,
) -> Result<HotResult> {
    let breakdown = build_cost_matrix(src_batch, tgt_batch, params, classifier)?;
    let plan = solve_domain(&breakdown.cost, solver, cfg)?;
    Ok(HotResult {
        hot_value: plan.objective_value,
        cost_matrix: breakdown.cost,
        per_term_costs: breakdown.terms,
        plan,
    })
}

/// Settings for one DeepHOT loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepHotConfig {
    pub solver: DomainSolver,
    pub sinkhorn: SinkhornConfig,
}

impl Default for DeepHotConfig {
    fn default() -> Self {
        Self {
            solver: DomainSolver::Unbalanced,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

/// Loss value, diagnostics and gradients of one DeepHOT step.
#[derive(Debug, Clone)]
pub struct DeepHotOutput {
    /// `source CE + <plan, C>`; the only quantity that is differentiated.
    pub loss: f64,
    pub source_ce: f64,
    /// `<plan, C>`.
    pub transport_term: f64,
    /// Full objective of the domain-level solver (includes the entropic and
    /// marginal penalty terms). Diagnostic only.
    pub objective: f64,
    pub plan: TransportPlan,
    pub cost: CostBreakdown,
    pub model_grads: ModelParams,
    /// `M x C`, zero when the SWD term is inactive.
    pub projection_grads: Array2<f64>,
}

/// Forward pass of a whole mini-batch, kept for the reverse pass.
pub struct BatchForward {
    src_embedded: Vec<PatchGrid>,
    tgt_embedded: Vec<PatchGrid>,
    src_caches: Vec<EmbedCache>,
    tgt_caches: Vec<EmbedCache>,
    src_probs: Vec<Array1<f64>>,
}

impl BatchForward {
    pub fn new(model: &ModelParams, src_raw: &[PatchGrid], tgt_raw: &[PatchGrid]) -> Result<Self> {
        if src_raw.is_empty() || tgt_raw.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let embed = |raw: &[PatchGrid]| -> Result<(Vec<PatchGrid>, Vec<EmbedCache>)> {
            let mut gs = Vec::with_capacity(raw.len());
            let mut cs = Vec::with_capacity(raw.len());
            for r in raw {
                let (g, c) = model.embed_with_cache(r)?;
                gs.push(g);
                cs.push(c);
            }
            Ok((gs, cs))
        };
        let (src_embedded, src_caches) = embed(src_raw)?;
        let (tgt_embedded, tgt_caches) = embed(tgt_raw)?;
        let src_probs = src_embedded.iter().map(|g| model.pool_and_classify(g)).collect();
        Ok(Self {
            src_embedded,
            tgt_embedded,
            src_caches,
            tgt_caches,
            src_probs,
        })
    }

    pub fn source_embeddings(&self) -> &[PatchGrid] {
        &self.src_embedded
    }

    pub fn target_embeddings(&self) -> &[PatchGrid] {
        &self.tgt_embedded
    }

    pub fn source_ce(&self, labels: &[usize]) -> f64 {
        let n = labels.len() as f64;
        self.src_probs
            .iter()
            .zip(labels)
            .map(|(p, &y)| cross_entropy(p.view(), y))
            .sum::<f64>()
            / n
    }

    pub fn cost(&self, labels: &[usize], params: &GroundCostParams, model: &ModelParams) -> Result<CostBreakdown> {
        let src: Vec<&PatchGrid> = self.src_embedded.iter().collect();
        let tgt: Vec<&PatchGrid> = self.tgt_embedded.iter().collect();
        let feats = BatchFeatures::compute(&src, &tgt, params, |p| model.predict_proba(p))?;
        feats.cost_matrix(labels, model.dims.classes, params)
    }

    /// Gradients of `source CE + <coupling, C>` with the coupling held fixed.
    pub fn backward(
        &self,
        labels: &[usize],
        coupling: &Array2<f64>,
        params: &GroundCostParams,
        model: &ModelParams,
    ) -> Result<(ModelParams, Array2<f64>)> {
        let (ns, nt) = (self.src_embedded.len(), self.tgt_embedded.len());
        if coupling.dim() != (ns, nt) {
            return Err(Error::ShapeMismatch(format!(
                "coupling is {:?}, batch is {ns}x{nt}",
                coupling.dim()
            )));
        }
        if labels.len() != ns {
            return Err(Error::ShapeMismatch(format!("{ns} source grids but {} labels", labels.len())));
        }
        for &y in labels {
            check_label(y, model.dims.classes)?;
        }
        let mut grads = model.zeros_like();
        let (k, c) = (self.src_embedded[0].patch_count(), self.src_embedded[0].channels());
        let mut d_src: Vec<Array2<f64>> = vec![Array2::zeros((k, c)); ns];
        let mut d_tgt: Vec<Array2<f64>> = vec![Array2::zeros((k, c)); nt];
        let mut d_src_pool: Vec<Array1<f64>> = vec![Array1::zeros(c); ns];
        let mut d_tgt_pool: Vec<Array1<f64>> = vec![Array1::zeros(c); nt];
        let m = params.proj.len();
        let mut d_proj = Array2::zeros((m, params.proj.dim()));

        let src_pooled: Vec<Array1<f64>> = self.src_embedded.iter().map(PatchGrid::mean).collect();
        let tgt_pooled: Vec<Array1<f64>> = self.tgt_embedded.iter().map(PatchGrid::mean).collect();

        // Source cross-entropy.
        for i in 0..ns {
            let dl = cross_entropy_logit_grad(self.src_probs[i].view(), labels[i]) / ns as f64;
            d_src_pool[i] += &model.backward_classifier(src_pooled[i].view(), dl.view(), &mut grads);
        }

        let [eta1, eta2, eta3] = params.weights();

        // Semantic term: f applied to the pooled target embedding.
        if eta3 > 0.0 {
            for j in 0..nt {
                let probs = model.predict_proba(tgt_pooled[j].view());
                let mut dl = Array1::zeros(probs.len());
                for i in 0..ns {
                    let g = coupling[[i, j]];
                    if g != 0.0 {
                        dl.scaled_add(eta3 * g, &cross_entropy_logit_grad(probs.view(), labels[i]));
                    }
                }
                d_tgt_pool[j] += &model.backward_classifier(tgt_pooled[j].view(), dl.view(), &mut grads);
            }
        }

        // Pooled squared distance.
        if eta2 > 0.0 {
            for i in 0..ns {
                for j in 0..nt {
                    let g = coupling[[i, j]];
                    if g == 0.0 {
                        continue;
                    }
                    let diff = &src_pooled[i] - &tgt_pooled[j];
                    d_src_pool[i].scaled_add(2.0 * eta2 * g, &diff);
                    d_tgt_pool[j].scaled_add(-2.0 * eta2 * g, &diff);
                }
            }
        }

        // Image-level OT term.
        if eta1 > 0.0 {
            match params.image_ot {
                ImageOt::Swd => {
                    let src_sorted: Vec<SortedProjections> = self
                        .src_embedded
                        .iter()
                        .map(|g| SortedProjections::new(g, &params.proj))
                        .collect::<Result<_>>()?;
                    let tgt_sorted: Vec<SortedProjections> = self
                        .tgt_embedded
                        .iter()
                        .map(|g| SortedProjections::new(g, &params.proj))
                        .collect::<Result<_>>()?;
                    let mut acc_src = vec![Array2::zeros((m, k)); ns];
                    let mut acc_tgt = vec![Array2::zeros((m, k)); nt];
                    for i in 0..ns {
                        for j in 0..nt {
                            let g = coupling[[i, j]];
                            if g == 0.0 {
                                continue;
                            }
                            let (left, right) = (&mut acc_src[i], &mut acc_tgt[j]);
                            src_sorted[i].accumulate_projection_grads(&tgt_sorted[j], eta1 * g, left, right);
                        }
                    }
                    let dirs = params.proj.directions();
                    for i in 0..ns {
                        d_src[i] += &acc_src[i].t().dot(dirs);
                        d_proj += &acc_src[i].dot(self.src_embedded[i].patches());
                    }
                    for j in 0..nt {
                        d_tgt[j] += &acc_tgt[j].t().dot(dirs);
                        d_proj += &acc_tgt[j].dot(self.tgt_embedded[j].patches());
                    }
                }
                ImageOt::Exact => {
                    for i in 0..ns {
                        for j in 0..nt {
                            let g = coupling[[i, j]];
                            if g == 0.0 {
                                continue;
                            }
                            let pg = exact_patch_ot_grad(&self.src_embedded[i], &self.tgt_embedded[j])?;
                            d_src[i].scaled_add(eta1 * g, &pg.d_source);
                            d_tgt[j].scaled_add(eta1 * g, &pg.d_target);
                        }
                    }
                }
            }
        }

        // Mean pooling spreads the pooled gradient evenly over the patches.
        let inv_k = 1.0 / k as f64;
        for (d, p) in d_src.iter_mut().zip(&d_src_pool) {
            *d += &(p * inv_k).insert_axis(ndarray::Axis(0));
        }
        for (d, p) in d_tgt.iter_mut().zip(&d_tgt_pool) {
            *d += &(p * inv_k).insert_axis(ndarray::Axis(0));
        }
        for (cache, d) in self.src_caches.iter().zip(&d_src) {
            model.backward_embed(cache, d, &mut grads);
        }
        for (cache, d) in self.tgt_caches.iter().zip(&d_tgt) {
            model.backward_embed(cache, d, &mut grads);
        }
        Ok((grads, d_proj))
    }
}

/// Loss and gradients for a caller-supplied (frozen) coupling.
pub fn frozen_plan_loss(
    src_raw: &[PatchGrid],
    labels: &[usize],
    tgt_raw: &[PatchGrid],
    params: &GroundCostParams,
    model: &ModelParams,
    coupling: &Array2<f64>,
) -> Result<(f64, ModelParams, Array2<f64>)> {
    let fwd = BatchForward::new(model, src_raw, tgt_raw)?;
    let cost = fwd.cost(labels, params, model)?;
    let loss = fwd.source_ce(labels) + frobenius(coupling, cost.cost.entries());
    let (g, dp) = fwd.backward(labels, coupling, params, model)?;
    Ok((loss, g, dp))
}

/// One full DeepHOT evaluation: embed, build the cost matrix, solve the
/// domain-level plan, freeze it, and differentiate `CE + <plan, C>`.
///
/// A non-converged domain solve is reported through `plan.converged`; the
/// loss is still returned.
pub fn deephot_loss(
    src_raw: &[PatchGrid],
    labels: &[usize],
    tgt_raw: &[PatchGrid],
    params: &GroundCostParams,
    model: &ModelParams,
    cfg: &DeepHotConfig,
) -> Result<DeepHotOutput> {
    if src_raw.len() != tgt_raw.len() {
        return Err(Error::ShapeMismatch(format!(
            "source batch has {} samples, target batch {}",
            src_raw.len(),
            tgt_raw.len()
        )));
    }
    let fwd = BatchForward::new(model, src_raw, tgt_raw)?;
    let source_ce = fwd.source_ce(labels);
    let cost = fwd.cost(labels, params, model)?;
    let plan = solve_domain(&cost.cost, cfg.solver, &cfg.sinkhorn)?;
    let transport_term = frobenius(&plan.coupling, cost.cost.entries());
    let (model_grads, projection_grads) = fwd.backward(labels, &plan.coupling, params, model)?;
    Ok(DeepHotOutput {
        loss: source_ce + transport_term,
        source_ce,
        transport_term,
        objective: plan.objective_value,
        plan,
        cost,
        model_grads,
        projection_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dense, ModelDims};
    use ndarray::array;

    fn proj() -> ProjectionSet {
        ProjectionSet::random(6, 2, 1).unwrap()
    }

    fn grid(a: Array2<f64>) -> PatchGrid {
        PatchGrid::new(a).unwrap()
    }

    struct OneHot(usize, usize);
    impl Classifier for OneHot {
        fn class_count(&self) -> usize {
            self.1
        }
        fn predict_proba(&self, _: ArrayView1<f64>) -> Array1<f64> {
            let mut p = Array1::zeros(self.1);
            p[self.0] = 1.0;
            p
        }
    }

    #[test]
    fn identical_grids_without_semantic_term_cost_zero() {
        let z = grid(array![[0.0, 1.0], [2.0, 0.5], [1.0, -1.0]]);
        let p = GroundCostParams::new(0.1, 0.1, 0.0, proj()).unwrap();
        let (c, t) = ground_cost((&z, 0), &z, &p, &OneHot(1, 3)).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!((t.image_ot, t.pooled), (0.0, 0.0));
    }

    #[test]
    fn certain_correct_prediction_has_zero_semantic_cost() {
        let zi = grid(array![[0.0, 1.0], [2.0, 0.5]]);
        let zj = grid(array![[5.0, 1.0], [-2.0, 0.5]]);
        let p = GroundCostParams::new(0.0, 0.0, 1.0, proj()).unwrap();
        let (c, _) = ground_cost((&zi, 2), &zj, &p, &OneHot(2, 3)).unwrap();
        assert_eq!(c, 0.0);
        let (c, _) = ground_cost((&zi, 0), &zj, &p, &OneHot(2, 3)).unwrap();
        assert!((c - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(ground_cost((&zi, 3), &zj, &p, &OneHot(2, 3)).is_err());
    }

    #[test]
    fn weighted_sum_of_terms() {
        let t = TermTriple {
            image_ot: 8.0,
            pooled: 0.5,
            semantic: 0.2,
        };
        assert!((t.weighted([0.1, 0.1, 1.0]) - 1.05).abs() < 1e-12);
    }

    #[test]
    fn single_pair_matrix_and_zero_diagonal() {
        let z = vec![
            (grid(array![[0.0, 1.0], [2.0, 0.5]]), 0),
            (grid(array![[1.0, 1.0], [0.0, 0.5]]), 1),
        ];
        let tg: Vec<PatchGrid> = z.iter().map(|(g, _)| g.clone()).collect();
        let p = GroundCostParams::new(0.3, 0.7, 0.0, proj()).unwrap();
        let b = build_cost_matrix(&z, &tg, &p, &OneHot(0, 2)).unwrap();
        assert_eq!(b.cost.entries()[[0, 0]], 0.0);
        assert_eq!(b.cost.entries()[[1, 1]], 0.0);
        assert!(b.cost.entries()[[0, 1]] > 0.0);

        let one = build_cost_matrix(&z[..1], &tg[1..], &p, &OneHot(0, 2)).unwrap();
        let (c, _) = ground_cost((&z[0].0, 0), &tg[1], &p, &OneHot(0, 2)).unwrap();
        assert_eq!(one.cost.shape(), (1, 1));
        assert_eq!(one.cost.entries()[[0, 0]], c);
        assert!(build_cost_matrix(&[], &tg, &p, &OneHot(0, 2)).is_err());
    }

    #[test]
    fn domain_distance_edge_cases() {
        let cfg = SinkhornConfig::new(0.1, 0.45).with_tolerance(1e-12).with_max_iterations(10_000);
        let plan = domain_distance(&CostMatrix::new(array![[1.0]]).unwrap(), &cfg).unwrap();
        assert!((plan.coupling[[0, 0]] - (-1.0f64).exp()).abs() < 1e-9);

        let zero = CostMatrix::new(Array2::zeros((3, 3))).unwrap();
        let plan = domain_distance(&zero, &SinkhornConfig::new(0.5, 1.0)).unwrap();
        assert_eq!(plan.transport_value, 0.0);
        assert!(plan.objective_value >= 0.0);

        assert!(domain_distance(&CostMatrix::new(Array2::zeros((2, 3))).unwrap(), &cfg).is_err());
    }

    #[test]
    fn product_solver_weights_pairs_uniformly() {
        let cost = CostMatrix::new(array![[1.0, 3.0], [5.0, 7.0]]).unwrap();
        let plan = solve_domain(&cost, DomainSolver::Product, &SinkhornConfig::default()).unwrap();
        assert_eq!(plan.transport_value, 4.0);
    }

    fn toy_model() -> ModelParams {
        let dims = ModelDims {
            input_dim: 2,
            hidden_dim: 4,
            channels: 2,
            layers: 2,
            classes: 3,
        };
        ModelParams::init(dims, 3).unwrap()
    }

    fn toy_batch() -> (Vec<PatchGrid>, Vec<usize>, Vec<PatchGrid>) {
        let src = vec![
            grid(array![[0.5, 1.0], [1.0, 0.2], [0.3, 0.9]]),
            grid(array![[1.5, -0.3], [0.7, 0.8], [0.1, 0.4]]),
        ];
        let tgt = vec![
            grid(array![[0.6, 1.1], [0.9, 0.1], [0.2, 1.0]]),
            grid(array![[1.2, -0.1], [0.5, 0.9], [0.3, 0.2]]),
        ];
        (src, vec![0, 2], tgt)
    }

    #[test]
    fn zero_plan_leaves_only_source_ce() {
        let model = toy_model();
        let (src, y, tgt) = toy_batch();
        let p = GroundCostParams::new(0.5, 0.5, 1.0, ProjectionSet::random(4, 2, 2).unwrap()).unwrap();
        let (loss, g, dp) = frozen_plan_loss(&src, &y, &tgt, &p, &model, &Array2::zeros((2, 2))).unwrap();
        let fwd = BatchForward::new(&model, &src, &tgt).unwrap();
        assert_eq!(loss, fwd.source_ce(&y));
        assert!(dp.iter().all(|x| *x == 0.0));

        assert!(GroundCostParams::new(0.0, 0.0, 0.0, p.proj.clone()).is_err());
        // The loss itself accepts all-zero weights.
        let none = GroundCostParams {
            eta1: 0.0,
            eta2: 0.0,
            eta3: 0.0,
            ..p
        };
        let out = deephot_loss(&src, &y, &tgt, &none, &model, &DeepHotConfig::default()).unwrap();
        assert_eq!(out.transport_term, 0.0);
        assert_eq!(out.loss, out.source_ce);
        assert_eq!(out.model_grads, g);
    }

    #[test]
    fn deephot_rejects_unequal_batches() {
        let model = toy_model();
        let (src, y, tgt) = toy_batch();
        let p = GroundCostParams::new(0.5, 0.5, 1.0, ProjectionSet::random(4, 2, 2).unwrap()).unwrap();
        assert!(deephot_loss(&src, &y, &tgt[..1], &p, &model, &DeepHotConfig::default()).is_err());
    }

    #[test]
    fn zero_classifier_semantic_cost_is_log_classes() {
        let mut model = toy_model();
        model.classifier = Dense::zeros(2, 3);
        let (src, y, tgt) = toy_batch();
        let p = GroundCostParams::new(0.0, 0.0, 1.0, ProjectionSet::random(4, 2, 2).unwrap()).unwrap();
        let fwd = BatchForward::new(&model, &src, &tgt).unwrap();
        let c = fwd.cost(&y, &p, &model).unwrap();
        for x in c.cost.entries().iter() {
            assert!((x - 3f64.ln()).abs() < 1e-12);
        }
    }
}
