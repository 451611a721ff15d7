use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hierot::data::Domain;
use hierot::harness::{
    evaluate, export_data, load_data, run_ablation, run_batch_size_sweep, run_projection_sweep, run_timing_bench,
    train_on, write_run_outputs, ExperimentConfig, Preset, TimingVariant,
};
use hierot::model::Checkpoint;
use hierot::Error;

#[derive(Parser)]
#[command(name = "hierot", version, about = "Hierarchical OT domain adaptation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in synthetic defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override such as `ground_cost.eta1=0.5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel experiments in sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Also write long-format CSV for plotting.
    #[arg(long, global = true)]
    emit_plot_data: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain on the source domain, then adapt for the configured iterations.
    Train,
    /// Accuracy of a saved checkpoint on the configured data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `source` or `target`.
        #[arg(long, default_value = "target")]
        split: String,
    },
    /// Unbalanced vs exact domain-level OT across batch sizes.
    SweepBatchSize {
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 40])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Accuracy across numbers of projections.
    SweepProjections {
        #[arg(long = "projections", value_delimiter = ',', default_values_t = [4, 16, 64])]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Per-iteration wall time of the image-level variants.
    BenchTiming {
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Train the ablation presets on several seeds.
    Ablation {
        /// Preset names or letters, e.g. `source_only,c,d`.
        #[arg(long, value_delimiter = ',')]
        presets: Vec<String>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Write the source and target datasets as CSV.
    GenData,
}

fn resolve_config(common: &Common) -> hierot::Result<ExperimentConfig> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = Some(dir.clone());
    }
    if common.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn run(cli: Cli) -> hierot::Result<ExitCode> {
    let mut cfg = resolve_config(&cli.common)?;
    let jobs = cli.common.jobs;
    let plot = cli.common.emit_plot_data;
    match cli.command {
        Command::Train => {
            let dir = output_dir(&cfg, "hierot-run");
            cfg.output_dir = Some(dir.clone());
            let (source, target) = load_data(&cfg)?;
            let report = train_on(&cfg, &source, &target)?;
            write_run_outputs(&dir, &cfg, &report, plot)?;
            println!(
                "target accuracy {:.4} (after pretraining {:.4}), source accuracy {:.4}, outputs in {}",
                report.target_accuracy,
                report.initial_target_accuracy,
                report.source_accuracy,
                dir.display()
            );
            if report.divergence_exceeded {
                eprintln!(
                    "domain-level solver failed to converge on {:.1}% of iterations",
                    100.0 * report.nonconverged_fraction
                );
                return Ok(ExitCode::from(4));
            }
        }
        Command::Eval { checkpoint, split } => {
            let domain = match split.as_str() {
                "source" => Domain::Source,
                "target" => Domain::Target,
                other => return Err(Error::Config(format!("unknown split `{other}`"))),
            };
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (source, target) = load_data(&cfg)?;
            let ds = if domain == Domain::Source { &source } else { &target };
            println!("{domain} accuracy {:.4}", evaluate(&ckpt, ds)?);
        }
        Command::SweepBatchSize { sizes, repeats } => {
            let report = run_batch_size_sweep(&cfg, &sizes, repeats, jobs, plot)?;
            for (solver, by_size) in &report.mean_accuracy {
                for (n, acc) in by_size {
                    println!("{solver:<10} batch {n:>3}  accuracy {acc:.4}");
                }
                println!("{solver:<10} relative change {:.4}", report.relative_change[solver]);
            }
        }
        Command::SweepProjections { counts, repeats } => {
            let report = run_projection_sweep(&cfg, &counts, repeats, jobs, plot)?;
            for (m, acc) in &report.mean_accuracy {
                println!("M {m:>3}  accuracy {acc:.4}");
            }
            println!("spread {:.4}", report.spread);
        }
        Command::BenchTiming { repeats } => {
            let report = run_timing_bench(&cfg, repeats)?;
            for v in TimingVariant::ALL {
                println!("{v:?}: {:.3} ms/iteration", report.mean(v));
            }
        }
        Command::Ablation { presets, repeats } => {
            let presets = if presets.is_empty() {
                Preset::ABLATION.to_vec()
            } else {
                presets.iter().map(|p| Preset::parse(p)).collect::<hierot::Result<Vec<_>>>()?
            };
            let report = run_ablation(&cfg, &presets, repeats, jobs, plot)?;
            for (p, acc) in &report.mean_accuracy {
                println!("{:<22} accuracy {acc:.4}", p.name());
            }
        }
        Command::GenData => {
            let dir = output_dir(&cfg, "hierot-data");
            export_data(&cfg, &dir)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::InvalidParameter(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Truncated { .. } | Error::Io(_) => 3,
        Error::SolverDivergence { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIEROT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
