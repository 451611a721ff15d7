//! Per-iteration wall time of sliced vs exact patch-level transport inside
//! the training loop.

use hierot::harness::{run_timing_bench, ExperimentConfig, TimingVariant, TIMING_WINDOW};

fn main() -> hierot::Result<()> {
    let cfg = ExperimentConfig::default();
    let report = run_timing_bench(&cfg, 3)?;
    println!("mean ms per iteration over iterations {}..{}:", TIMING_WINDOW.0, TIMING_WINDOW.1);
    for v in TimingVariant::ALL {
        println!("  {v:?}: {:.3}", report.mean(v));
    }
    println!(
        "sliced faster than exact in every repeat: {}",
        report.always_faster(TimingVariant::SwdUot, TimingVariant::ExactPatchUot)
    );
    Ok(())
}
