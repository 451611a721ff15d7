//! The adaptation loop: sample batches, solve the domain-level plan, freeze
//! it, take an SGD step on the model and the projections.

use std::path::Path;
use std::time::Instant;

use ndarray::Axis;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DataConfig, ExperimentConfig};
use crate::data::{gen_synthetic_pair, load_idx_digits, Domain, LabeledDataset, Sampler, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::hot::{deephot_loss, DeepHotConfig, DomainSolver, GroundCostParams};
use crate::measures::uniform_weights;
use crate::model::{cross_entropy, cross_entropy_logit_grad, Checkpoint, ModelParams, PatchGrid, Sgd};
use crate::solvers::ProjectionSet;

/// Derives an independent seed for one random stream of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const PROJECTION_STREAM: u64 = 3;
const SOURCE_STREAM: u64 = 4;
const TARGET_STREAM: u64 = 5;
const PRETRAIN_STREAM: u64 = 6;

/// Loads or generates `(source, target)`; target labels are for evaluation.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &cfg.data {
        DataConfig::Synthetic {
            shift,
            class_count,
            n_source,
            n_target,
        } => gen_synthetic_pair(shift, *class_count, *n_source, *n_target, derive_seed(cfg.seed, DATA_STREAM)),
        DataConfig::Idx {
            downsample_to,
            patch_grid,
            ..
        } => {
            let load = |d: Domain| {
                let (img, lab) = cfg.data.idx_paths(d).expect("idx config");
                load_idx_digits(img, lab, *downsample_to, *patch_grid, d)
            };
            Ok((load(Domain::Source)?, load(Domain::Target)?))
        }
    }
}

/// Diagnostics averaged over the iterations since the previous record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub source_ce: f64,
    /// `<plan, C>`.
    pub transport: f64,
    /// Full objective of the domain-level solver.
    pub objective: f64,
    pub marginal_deviation: f64,
    /// Mean `eta`-weighted ground-cost terms (image OT, pooled, semantic).
    pub weighted_terms: [f64; 3],
    /// Mean raw ground-cost terms.
    pub raw_terms: [f64; 3],
    pub target_accuracy: f64,
    /// Wall-clock time; kept out of `metrics.csv` so that file stays
    /// reproducible byte for byte.
    pub ms_per_iteration: f64,
}

pub const METRICS_HEADER: &str = "iteration,source_ce,transport,objective,marginal_deviation,\
weighted_image_ot,weighted_pooled,weighted_semantic,raw_image_ot,raw_pooled,raw_semantic,target_accuracy";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.iteration.to_string(),
            self.source_ce.to_string(),
            self.transport.to_string(),
            self.objective.to_string(),
            self.marginal_deviation.to_string(),
        ];
        cols.extend(self.weighted_terms.iter().map(f64::to_string));
        cols.extend(self.raw_terms.iter().map(f64::to_string));
        cols.push(self.target_accuracy.to_string());
        cols.join(",")
    }

    /// `(metric, value)` pairs for long-format plot data.
    pub fn long_form(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("source_ce", self.source_ce),
            ("transport", self.transport),
            ("objective", self.objective),
            ("marginal_deviation", self.marginal_deviation),
            ("weighted_image_ot", self.weighted_terms[0]),
            ("weighted_pooled", self.weighted_terms[1]),
            ("weighted_semantic", self.weighted_terms[2]),
            ("raw_image_ot", self.raw_terms[0]),
            ("raw_pooled", self.raw_terms[1]),
            ("raw_semantic", self.raw_terms[2]),
            ("target_accuracy", self.target_accuracy),
        ]
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Statistics of one adaptation iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub source_ce: f64,
    pub transport: f64,
    pub objective: f64,
    pub marginal_deviation: f64,
    pub weighted_terms: [f64; 3],
    pub raw_terms: [f64; 3],
    pub converged: bool,
}

#[derive(Default)]
struct Window {
    count: usize,
    sum: StepStats,
    ms: f64,
}

impl Window {
    fn add(&mut self, s: &StepStats, ms: f64) {
        self.count += 1;
        self.ms += ms;
        let t = &mut self.sum;
        t.source_ce += s.source_ce;
        t.transport += s.transport;
        t.objective += s.objective;
        t.marginal_deviation += s.marginal_deviation;
        for k in 0..3 {
            t.weighted_terms[k] += s.weighted_terms[k];
            t.raw_terms[k] += s.raw_terms[k];
        }
    }

    fn flush(&mut self, iteration: usize, target_accuracy: f64) -> MetricsRecord {
        let n = self.count.max(1) as f64;
        let s = &self.sum;
        let rec = MetricsRecord {
            iteration,
            source_ce: s.source_ce / n,
            transport: s.transport / n,
            objective: s.objective / n,
            marginal_deviation: s.marginal_deviation / n,
            weighted_terms: s.weighted_terms.map(|v| v / n),
            raw_terms: s.raw_terms.map(|v| v / n),
            target_accuracy,
            ms_per_iteration: self.ms / n,
        };
        *self = Window::default();
        rec
    }
}

/// Mean cross-entropy of a labeled batch and its gradient.
pub fn source_ce_grads(model: &ModelParams, grids: &[&PatchGrid], labels: &[usize]) -> Result<(f64, ModelParams)> {
    let mut grads = model.zeros_like();
    let n = grids.len() as f64;
    let mut loss = 0.0;
    for (g, &y) in grids.iter().zip(labels) {
        let (z, cache) = model.embed_with_cache(g)?;
        let pooled = z.mean();
        let probs = model.pool_and_classify(&z);
        loss += cross_entropy(probs.view(), y) / n;
        let dl = cross_entropy_logit_grad(probs.view(), y) / n;
        let dp = model.backward_classifier(pooled.view(), dl.view(), &mut grads);
        let k = z.patch_count() as f64;
        let dz = (dp / k).insert_axis(Axis(0)).broadcast(z.patches().raw_dim()).expect("broadcast").to_owned();
        model.backward_embed(&cache, &dz, &mut grads);
    }
    Ok((loss, grads))
}

/// Top-1 accuracy of `model` on `ds`.
pub fn accuracy(model: &ModelParams, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let correct = ds
        .samples()
        .par_iter()
        .zip(ds.labels().par_iter())
        .map(|(g, &y)| model.predict(g).map(|p| usize::from(p == y)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / ds.len() as f64)
}

/// Model, projections, optimizer and samplers of one run. Only sees the
/// target domain through an [`UnlabeledDataset`].
pub struct Trainer {
    cfg: ExperimentConfig,
    pub model: ModelParams,
    /// `None` when every ground-cost weight is switched off.
    pub ground: Option<GroundCostParams>,
    pub projections: ProjectionSet,
    deephot: DeepHotConfig,
    opt: Sgd,
    source_sampler: Sampler,
    target_sampler: Sampler,
    class_indices: Vec<Vec<usize>>,
    nonconverged: usize,
    steps: usize,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, source: &LabeledDataset, target: &UnlabeledDataset) -> Result<Self> {
        cfg.validate()?;
        let shape = (cfg.data.grid_shape(), cfg.model.input_dim);
        for (name, gs) in [("source", source.grid_shape()), ("target", target.samples().first().map(|g| (g.patch_count(), g.channels())))] {
            let gs = gs.ok_or_else(|| Error::Data(format!("{name} dataset is empty")))?;
            if gs.1 != shape.1 {
                return Err(Error::Data(format!(
                    "{name} patches have dim {}, model expects {}",
                    gs.1, shape.1
                )));
            }
        }
        if source.class_count() != cfg.model.classes {
            return Err(Error::Data(format!(
                "source has {} classes, model expects {}",
                source.class_count(),
                cfg.model.classes
            )));
        }
        let model = ModelParams::init(cfg.model, derive_seed(cfg.seed, INIT_STREAM))?;
        let proj_seed = cfg
            .ground_cost
            .projection_seed
            .unwrap_or_else(|| derive_seed(cfg.seed, PROJECTION_STREAM));
        let projections = ProjectionSet::random(cfg.ground_cost.projections, cfg.model.channels, proj_seed)?;
        let [eta1, eta2, eta3] = cfg.effective_etas();
        let ground = if eta1 > 0.0 || eta2 > 0.0 || eta3 > 0.0 {
            Some(GroundCostParams::new(eta1, eta2, eta3, projections.clone())?.with_image_ot(cfg.ground_cost.image_ot))
        } else {
            None
        };
        Ok(Self {
            deephot: DeepHotConfig {
                solver: cfg.domain_solver(),
                sinkhorn: cfg.sinkhorn,
            },
            opt: Sgd::new(cfg.optimizer.momentum, cfg.optimizer.weight_decay),
            source_sampler: Sampler::new(derive_seed(cfg.seed, SOURCE_STREAM)),
            target_sampler: Sampler::new(derive_seed(cfg.seed, TARGET_STREAM)),
            class_indices: source.class_indices(),
            cfg: cfg.clone(),
            model,
            ground,
            projections,
            nonconverged: 0,
            steps: 0,
        })
    }

    /// Source-only epochs before adaptation.
    pub fn pretrain(&mut self, source: &LabeledDataset) -> Result<()> {
        let mut sampler = Sampler::new(derive_seed(self.cfg.seed, PRETRAIN_STREAM));
        let mut opt = Sgd::new(self.cfg.optimizer.momentum, self.cfg.optimizer.weight_decay);
        let lr = self.cfg.optimizer.pretrain_lr;
        let clr = lr * self.cfg.lr.classifier_multiplier;
        for _ in 0..self.cfg.pretrain_epochs {
            let order = sampler.permutation(source.len());
            for chunk in order.chunks(self.cfg.batch_size) {
                let grids: Vec<&PatchGrid> = chunk.iter().map(|&i| &source.samples()[i]).collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| source.labels()[i]).collect();
                let (_, g) = source_ce_grads(&self.model, &grids, &labels)?;
                opt.step(&mut self.model, &g, lr, clr)?;
            }
        }
        Ok(())
    }

    /// One adaptation iteration at progress `q` in `[0, 1]`.
    pub fn step(&mut self, source: &LabeledDataset, target: &UnlabeledDataset, q: f64) -> Result<StepStats> {
        let n = self.cfg.batch_size;
        let sb = self.source_sampler.class_balanced(&self.class_indices, n)?;
        let tb = self.target_sampler.random(target.len(), n)?;
        let lr = self.cfg.lr.lr_at(q)?;
        let clr = self.cfg.lr.classifier_lr_at(q)?;
        self.steps += 1;

        let Some(ground) = self.ground.as_mut() else {
            let grids: Vec<&PatchGrid> = sb.indices.iter().map(|&i| &source.samples()[i]).collect();
            let labels: Vec<usize> = sb.indices.iter().map(|&i| source.labels()[i]).collect();
            let (loss, g) = source_ce_grads(&self.model, &grids, &labels)?;
            self.opt.step(&mut self.model, &g, lr, clr)?;
            return Ok(StepStats {
                source_ce: loss,
                converged: true,
                ..StepStats::default()
            });
        };

        let src: Vec<PatchGrid> = sb.indices.iter().map(|&i| source.samples()[i].clone()).collect();
        let labels: Vec<usize> = sb.indices.iter().map(|&i| source.labels()[i]).collect();
        let tgt: Vec<PatchGrid> = tb.indices.iter().map(|&i| target.samples()[i].clone()).collect();
        let out = deephot_loss(&src, &labels, &tgt, ground, &self.model, &self.deephot)?;
        if !out.plan.converged {
            self.nonconverged += 1;
        }
        self.opt.step(&mut self.model, &out.model_grads, lr, clr)?;
        if ground.eta1 > 0.0 && self.cfg.ground_cost.learn_projections {
            let plr = lr * self.cfg.optimizer.projection_lr_multiplier;
            self.opt
                .step_projections(&mut ground.proj, &out.projection_grads, plr, self.cfg.ground_cost.renormalize)?;
            self.projections = ground.proj.clone();
        }
        let raw = out.cost.mean_terms();
        let w = ground.weights();
        let u = uniform_weights(n);
        Ok(StepStats {
            source_ce: out.source_ce,
            transport: out.transport_term,
            objective: out.objective,
            marginal_deviation: if self.deephot.solver == DomainSolver::Product {
                0.0
            } else {
                out.plan.marginal_deviation(&u, &u)
            },
            weighted_terms: [w[0] * raw[0], w[1] * raw[1], w[2] * raw[2]],
            raw_terms: raw,
            converged: out.plan.converged,
        })
    }

    pub fn nonconverged_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.nonconverged as f64 / self.steps as f64
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, Some(&self.projections))
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainingReport {
    pub records: Vec<MetricsRecord>,
    pub final_record: MetricsRecord,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    /// Target accuracy right after pretraining.
    pub initial_target_accuracy: f64,
    pub nonconverged_fraction: f64,
    pub divergence_exceeded: bool,
    pub mean_iteration_ms: f64,
    pub total_seconds: f64,
    #[serde(skip)]
    pub checkpoint: Checkpoint,
}

/// Generates or loads the data from the config and trains on it.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingReport> {
    cfg.validate()?;
    let (source, target) = load_data(cfg)?;
    let report = train_on(cfg, &source, &target)?;
    if let Some(dir) = &cfg.output_dir {
        write_run_outputs(dir, cfg, &report, false)?;
    }
    Ok(report)
}

/// Runs pretraining and `cfg.iterations` adaptation steps. The target labels
/// in `target_eval` are only used to fill the accuracy column.
pub fn train_on(cfg: &ExperimentConfig, source: &LabeledDataset, target_eval: &LabeledDataset) -> Result<TrainingReport> {
    let started = Instant::now();
    let target = target_eval.unlabeled();
    let mut trainer = Trainer::new(cfg, source, &target)?;
    trainer.pretrain(source)?;
    let initial = accuracy(&trainer.model, target_eval)?;
    let t = cfg.iterations;
    let mut records = Vec::new();
    let mut window = Window::default();
    let mut total_ms = 0.0;
    for it in 0..t {
        let tick = Instant::now();
        let stats = trainer.step(source, &target, it as f64 / t as f64)?;
        let ms = tick.elapsed().as_secs_f64() * 1e3;
        total_ms += ms;
        window.add(&stats, ms);
        let done = it + 1;
        if done % cfg.eval_interval == 0 || done == t {
            let acc = accuracy(&trainer.model, target_eval)?;
            log::debug!("iteration {done}: target accuracy {acc:.4}");
            records.push(window.flush(done, acc));
        }
    }
    if records.is_empty() {
        records.push(window.flush(0, initial));
    }
    let nonconverged_fraction = trainer.nonconverged_fraction();
    let divergence_exceeded = nonconverged_fraction > cfg.max_nonconverged_fraction;
    if divergence_exceeded {
        log::warn!(
            "{:.1}% of domain-level solves did not converge (limit {:.1}%)",
            100.0 * nonconverged_fraction,
            100.0 * cfg.max_nonconverged_fraction
        );
    }
    let final_record = records.last().expect("at least one record").clone();
    Ok(TrainingReport {
        source_accuracy: accuracy(&trainer.model, source)?,
        target_accuracy: final_record.target_accuracy,
        initial_target_accuracy: initial,
        final_record,
        records,
        nonconverged_fraction,
        divergence_exceeded,
        mean_iteration_ms: if t > 0 { total_ms / t as f64 } else { 0.0 },
        total_seconds: started.elapsed().as_secs_f64(),
        checkpoint: trainer.checkpoint(),
    })
}

/// Writes `metrics.csv`, `summary.json`, `config.resolved.json` and
/// `checkpoint.json` (plus `plot_data.csv` when asked) into `dir`.
pub fn write_run_outputs(dir: &Path, cfg: &ExperimentConfig, report: &TrainingReport, plot_data: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&report.records))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("config.resolved.json"), cfg.to_json_pretty()?)?;
    report.checkpoint.save(&dir.join("checkpoint.json"))?;
    if plot_data {
        let mut out = String::from("run,iteration,metric,value\n");
        let run = dir.file_name().and_then(|s| s.to_str()).unwrap_or("run");
        for r in &report.records {
            for (m, v) in r.long_form() {
                out.push_str(&format!("{run},{},{m},{v}\n", r.iteration));
            }
        }
        std::fs::write(dir.join("plot_data.csv"), out)?;
    }
    Ok(())
}

/// Top-1 accuracy of a checkpointed model on a labeled dataset.
pub fn evaluate(checkpoint: &Checkpoint, ds: &LabeledDataset) -> Result<f64> {
    let model = checkpoint.to_model()?;
    if let Some((_, d)) = ds.grid_shape() {
        if d != model.dims.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "dataset patches have dim {d}, checkpoint expects {}",
                model.dims.input_dim
            )));
        }
    }
    if ds.class_count() > model.dims.classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes, checkpoint has {}",
            ds.class_count(),
            model.dims.classes
        )));
    }
    accuracy(&model, ds)
}
