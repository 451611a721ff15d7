//! Experiment configuration, the training loop, sweeps and result files.

mod config;
mod sweeps;
mod train;

pub use config::{AblationSwitches, DataConfig, ExperimentConfig, GroundCostConfig, OptimizerConfig, Preset};
pub use sweeps::{
    export_data, relative_change, run_ablation, run_batch_size_sweep, run_many, run_projection_sweep, run_timing_bench,
    AblationReport, BatchSizeReport, ProjectionReport, RunRow, TimingReport, TimingVariant, TIMING_WINDOW,
};
pub use train::{
    accuracy, derive_seed, evaluate, load_data, metrics_csv, run_training, source_ce_grads, train_on,
    write_run_outputs, MetricsRecord, StepStats, Trainer, TrainingReport, METRICS_HEADER,
};
