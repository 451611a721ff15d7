//! Multi-run experiments: ablation table, batch-size and projection sweeps,
//! timing benchmark.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Preset};
use super::train::{load_data, train_on, write_run_outputs, Trainer, TrainingReport};
use crate::error::{Error, Result};
use crate::hot::{DomainSolver, ImageOt};

/// One named run of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub name: String,
    pub seed: u64,
    pub target_accuracy: f64,
    pub initial_target_accuracy: f64,
    pub source_accuracy: f64,
    pub nonconverged_fraction: f64,
    pub divergence_exceeded: bool,
}

/// Runs independent experiments on up to `jobs` threads (0 = all cores).
/// Results come back in input order.
pub fn run_many(runs: Vec<(String, ExperimentConfig)>, jobs: usize, plot_data: bool) -> Result<Vec<(RunRow, TrainingReport)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        runs.into_par_iter()
            .map(|(name, cfg)| {
                log::info!("starting run {name}");
                let (source, target) = load_data(&cfg)?;
                let report = train_on(&cfg, &source, &target)?;
                if let Some(dir) = &cfg.output_dir {
                    write_run_outputs(dir, &cfg, &report, plot_data)?;
                }
                log::info!("run {name}: target accuracy {:.4}", report.target_accuracy);
                let row = RunRow {
                    name,
                    seed: cfg.seed,
                    target_accuracy: report.target_accuracy,
                    initial_target_accuracy: report.initial_target_accuracy,
                    source_accuracy: report.source_accuracy,
                    nonconverged_fraction: report.nonconverged_fraction,
                    divergence_exceeded: report.divergence_exceeded,
                };
                Ok((row, report))
            })
            .collect()
    })
}

fn variant(base: &ExperimentConfig, name: &str, repeat: usize) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.seed = base.seed + repeat as u64;
    cfg.output_dir = base.output_dir.as_ref().map(|d| d.join(format!("{name}_seed{}", cfg.seed)));
    cfg
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn write_report<T: Serialize>(base: &ExperimentConfig, file: &str, report: &T, csv: String, plot: Option<String>) -> Result<()> {
    if let Some(dir) = &base.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{file}.json")), serde_json::to_string_pretty(report)?)?;
        std::fs::write(dir.join(format!("{file}.csv")), csv)?;
        if let Some(p) = plot {
            std::fs::write(dir.join(format!("{file}_plot_data.csv")), p)?;
        }
    }
    Ok(())
}

/// Accuracy of every preset, per seed and averaged.
#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub runs: Vec<RunRow>,
    /// Mean target accuracy per preset, in the order requested.
    pub mean_accuracy: Vec<(Preset, f64)>,
}

impl AblationReport {
    pub fn mean(&self, preset: Preset) -> Option<f64> {
        self.mean_accuracy.iter().find(|(p, _)| *p == preset).map(|(_, a)| *a)
    }
}

/// Trains each preset on `repeats` seeds (`cfg.seed + r`).
pub fn run_ablation(cfg: &ExperimentConfig, presets: &[Preset], repeats: usize, jobs: usize, plot_data: bool) -> Result<AblationReport> {
    if presets.is_empty() || repeats == 0 {
        return Err(Error::Config("ablation needs at least one preset and one repeat".into()));
    }
    let mut runs = Vec::new();
    for &p in presets {
        for r in 0..repeats {
            runs.push((p.name().to_string(), variant(&cfg.clone().with_preset(p), p.name(), r)));
        }
    }
    let results = run_many(runs, jobs, plot_data)?;
    let rows: Vec<RunRow> = results.into_iter().map(|(r, _)| r).collect();
    let mean_accuracy = presets
        .iter()
        .map(|p| (*p, mean(rows.iter().filter(|r| r.name == p.name()).map(|r| r.target_accuracy))))
        .collect();
    let report = AblationReport {
        runs: rows,
        mean_accuracy,
    };
    let mut csv = String::from("preset,seed,target_accuracy,initial_target_accuracy,source_accuracy\n");
    for r in &report.runs {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.seed, r.target_accuracy, r.initial_target_accuracy, r.source_accuracy
        ));
    }
    let plot = plot_data.then(|| {
        let mut p = String::from("preset,metric,value\n");
        for (preset, a) in &report.mean_accuracy {
            p.push_str(&format!("{},mean_target_accuracy,{a}\n", preset.name()));
        }
        p
    });
    write_report(cfg, "ablation", &report, csv, plot)?;
    Ok(report)
}

fn solver_name(s: DomainSolver) -> &'static str {
    match s {
        DomainSolver::Exact => "exact",
        DomainSolver::Balanced => "balanced",
        DomainSolver::Unbalanced => "unbalanced",
        DomainSolver::Product => "product",
    }
}

/// `(max - min) / max` of the values.
pub fn relative_change(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    if hi > 0.0 {
        (hi - lo) / hi
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSizeReport {
    pub runs: Vec<RunRow>,
    /// Mean accuracy keyed by solver name, then batch size.
    pub mean_accuracy: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Relative accuracy change across sizes, per solver, from the means.
    pub relative_change: BTreeMap<String, f64>,
}

/// Trains the configured preset at each batch size under the exact balanced
/// solver and the unbalanced solver, with shared seeds.
pub fn run_batch_size_sweep(cfg: &ExperimentConfig, sizes: &[usize], repeats: usize, jobs: usize, plot_data: bool) -> Result<BatchSizeReport> {
    if sizes.len() < 2 {
        return Err(Error::Config("batch-size sweep needs at least two sizes".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("batch-size sweep needs at least one repeat".into()));
    }
    let solvers = [DomainSolver::Exact, DomainSolver::Unbalanced];
    let mut runs = Vec::new();
    for s in solvers {
        for &n in sizes {
            for r in 0..repeats {
                let name = format!("{}_bs{n}", solver_name(s));
                let mut c = variant(cfg, &name, r);
                c.ablation.domain_solver = s;
                c.batch_size = n;
                c.validate()?;
                runs.push((name, c));
            }
        }
    }
    let rows: Vec<RunRow> = run_many(runs, jobs, plot_data)?.into_iter().map(|(r, _)| r).collect();
    let mut mean_accuracy = BTreeMap::new();
    let mut rel = BTreeMap::new();
    for s in solvers {
        let per: BTreeMap<usize, f64> = sizes
            .iter()
            .map(|&n| {
                let name = format!("{}_bs{n}", solver_name(s));
                (n, mean(rows.iter().filter(|r| r.name == name).map(|r| r.target_accuracy)))
            })
            .collect();
        rel.insert(solver_name(s).to_string(), relative_change(&per.values().copied().collect::<Vec<_>>()));
        mean_accuracy.insert(solver_name(s).to_string(), per);
    }
    let report = BatchSizeReport {
        runs: rows,
        mean_accuracy,
        relative_change: rel,
    };
    let mut csv = String::from("solver,batch_size,mean_target_accuracy\n");
    for (s, per) in &report.mean_accuracy {
        for (n, a) in per {
            csv.push_str(&format!("{s},{n},{a}\n"));
        }
    }
    let plot = plot_data.then(|| csv.clone());
    write_report(cfg, "batch_size_sweep", &report, csv, plot)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionReport {
    pub runs: Vec<RunRow>,
    /// `(M, mean target accuracy)` in the requested order.
    pub mean_accuracy: Vec<(usize, f64)>,
    /// Largest pairwise difference of the mean accuracies.
    pub spread: f64,
}

/// Trains with each projection count `M`, sharing seeds across counts.
pub fn run_projection_sweep(cfg: &ExperimentConfig, ms: &[usize], repeats: usize, jobs: usize, plot_data: bool) -> Result<ProjectionReport> {
    if ms.is_empty() || ms.contains(&0) || repeats == 0 {
        return Err(Error::Config("projection sweep needs counts >= 1 and one repeat".into()));
    }
    let mut runs = Vec::new();
    for &m in ms {
        for r in 0..repeats {
            let name = format!("m{m}");
            let mut c = variant(cfg, &name, r);
            c.ground_cost.projections = m;
            runs.push((name, c));
        }
    }
    let rows: Vec<RunRow> = run_many(runs, jobs, plot_data)?.into_iter().map(|(r, _)| r).collect();
    let mean_accuracy: Vec<(usize, f64)> = ms
        .iter()
        .map(|&m| {
            let name = format!("m{m}");
            (m, mean(rows.iter().filter(|r| r.name == name).map(|r| r.target_accuracy)))
        })
        .collect();
    let accs: Vec<f64> = mean_accuracy.iter().map(|(_, a)| *a).collect();
    let spread = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - accs.iter().copied().fold(f64::INFINITY, f64::min);
    let report = ProjectionReport {
        runs: rows,
        mean_accuracy,
        spread,
    };
    let mut csv = String::from("projections,mean_target_accuracy\n");
    for (m, a) in &report.mean_accuracy {
        csv.push_str(&format!("{m},{a}\n"));
    }
    let plot = plot_data.then(|| csv.clone());
    write_report(cfg, "projection_sweep", &report, csv, plot)?;
    Ok(report)
}

/// Variants compared by the timing benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingVariant {
    /// Sliced Wasserstein image level, unbalanced domain level.
    SwdUot,
    /// Exact patch OT image level, unbalanced domain level.
    ExactPatchUot,
    /// No image-level term.
    DomainOnly,
}

impl TimingVariant {
    pub const ALL: [TimingVariant; 3] = [TimingVariant::SwdUot, TimingVariant::ExactPatchUot, TimingVariant::DomainOnly];

    fn apply(self, cfg: &mut ExperimentConfig) {
        cfg.ablation = Preset::Full.switches();
        match self {
            TimingVariant::SwdUot => cfg.ground_cost.image_ot = ImageOt::Swd,
            TimingVariant::ExactPatchUot => cfg.ground_cost.image_ot = ImageOt::Exact,
            TimingVariant::DomainOnly => cfg.ablation.use_swd = false,
        }
    }
}

/// First and one-past-last iteration of the timed window.
pub const TIMING_WINDOW: (usize, usize) = (10, 100);

#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    /// Mean per-iteration milliseconds over the window, `[repeat][variant]`.
    pub per_repeat: Vec<Vec<(TimingVariant, f64)>>,
    pub mean_ms: Vec<(TimingVariant, f64)>,
}

impl TimingReport {
    pub fn mean(&self, v: TimingVariant) -> f64 {
        self.mean_ms.iter().find(|(x, _)| *x == v).map(|(_, t)| *t).unwrap_or(f64::NAN)
    }

    /// Whether `fast` beat `slow` in every repeat.
    pub fn always_faster(&self, fast: TimingVariant, slow: TimingVariant) -> bool {
        self.per_repeat.iter().all(|row| {
            let get = |v| row.iter().find(|(x, _)| *x == v).map(|(_, t)| *t).unwrap_or(f64::NAN);
            get(fast) < get(slow)
        })
    }
}

/// Mean wall time per adaptation iteration over iterations 10..100 for each
/// variant, on the same seed, repeated `repeats` times. Runs sequentially so
/// the variants do not compete for cores.
pub fn run_timing_bench(cfg: &ExperimentConfig, repeats: usize) -> Result<TimingReport> {
    if repeats == 0 {
        return Err(Error::Config("timing bench needs at least one repeat".into()));
    }
    let (source, target_eval) = load_data(cfg)?;
    let target = target_eval.unlabeled();
    let (lo, hi) = TIMING_WINDOW;
    let mut per_repeat = Vec::new();
    for _ in 0..repeats {
        let mut row = Vec::new();
        for v in TimingVariant::ALL {
            let mut c = cfg.clone();
            v.apply(&mut c);
            c.iterations = hi;
            let mut trainer = Trainer::new(&c, &source, &target)?;
            let mut total = 0.0;
            for it in 0..hi {
                let tick = Instant::now();
                trainer.step(&source, &target, it as f64 / hi as f64)?;
                if it >= lo {
                    total += tick.elapsed().as_secs_f64() * 1e3;
                }
            }
            row.push((v, total / (hi - lo) as f64));
        }
        per_repeat.push(row);
    }
    let mean_ms = TimingVariant::ALL
        .iter()
        .map(|&v| {
            (
                v,
                mean(per_repeat.iter().map(|row| row.iter().find(|(x, _)| *x == v).map(|(_, t)| *t).unwrap_or(f64::NAN))),
            )
        })
        .collect();
    let report = TimingReport { per_repeat, mean_ms };
    let mut csv = String::from("repeat,variant,mean_ms\n");
    for (r, row) in report.per_repeat.iter().enumerate() {
        for (v, t) in row {
            csv.push_str(&format!("{r},{},{t}\n", serde_json::to_value(v)?.as_str().unwrap_or("?")));
        }
    }
    write_report(cfg, "timing", &report, csv, None)?;
    Ok(report)
}

/// Writes a generated dataset pair as CSV files into `dir`.
pub fn export_data(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let (source, target) = load_data(cfg)?;
    std::fs::create_dir_all(dir)?;
    source.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("source.csv"))?))?;
    target.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("target_eval.csv"))?))?;
    Ok(())
}
