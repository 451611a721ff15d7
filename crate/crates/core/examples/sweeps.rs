//! Batch-size and projection-count sensitivity on the synthetic task, with
//! shorter runs than the defaults.

use hierot::harness::{run_batch_size_sweep, run_projection_sweep, ExperimentConfig};

fn main() -> hierot::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.iterations = 500;
    cfg.eval_interval = 250;

    let bs = run_batch_size_sweep(&cfg, &[10, 20, 40], 2, 1, false)?;
    for (solver, accs) in &bs.mean_accuracy {
        let row: Vec<String> = accs.iter().map(|(n, a)| format!("n={n}: {a:.3}")).collect();
        println!("{solver:<10} {}  relative change {:.3}", row.join("  "), bs.relative_change[solver]);
    }

    let pr = run_projection_sweep(&cfg, &[1, 4, 16, 64], 2, 1, false)?;
    for (m, a) in &pr.mean_accuracy {
        println!("M={m:<3} accuracy {a:.3}");
    }
    println!("spread {:.3}", pr.spread);
    Ok(())
}
