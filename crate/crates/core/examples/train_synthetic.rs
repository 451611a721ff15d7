//! Trains the full model on the synthetic shift task and prints the metric
//! records. Pass `--set`-style overrides as arguments, e.g. `iterations=500`.

use hierot::harness::{run_training, ExperimentConfig};

fn main() -> hierot::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = ExperimentConfig::default().with_overrides(&args)?;
    let report = run_training(&cfg)?;
    println!("{:>9} {:>10} {:>10} {:>9}", "iteration", "source_ce", "transport", "accuracy");
    for r in &report.records {
        println!("{:>9} {:>10.4} {:>10.4} {:>9.4}", r.iteration, r.source_ce, r.transport, r.target_accuracy);
    }
    println!(
        "target accuracy {:.4} (after pretraining {:.4}) in {:.1}s",
        report.target_accuracy, report.initial_target_accuracy, report.total_seconds
    );
    Ok(())
}
