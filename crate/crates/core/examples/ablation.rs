//! Runs every ablation preset on the synthetic task over three seeds.

use hierot::harness::{run_ablation, ExperimentConfig, Preset};

fn main() -> hierot::Result<()> {
    let cfg = ExperimentConfig::default();
    let report = run_ablation(&cfg, &Preset::ABLATION, 3, 1, false)?;
    for (preset, acc) in &report.mean_accuracy {
        println!("{:<22} {:.2}%", preset.name(), 100.0 * acc);
    }
    Ok(())
}
