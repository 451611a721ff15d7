//! Writes a tiny IDX image/label pair, loads it back as patch grids and
//! trains on it. Point the config's `data` section at real digit files to use
//! an actual dataset.

use hierot::data::{load_idx_digits, write_idx_images, write_idx_labels, Domain};
use hierot::harness::{run_training, DataConfig, ExperimentConfig};
use hierot::model::ModelDims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 28x28 image tiled with a 7x7 texture that depends on the label.
fn digit(textures: &[[bool; 49]], label: u8, noisy_background: bool, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let texture = &textures[label as usize];
    (0..28 * 28)
        .map(|i| {
            let (r, c) = (i / 28, i % 28);
            match (texture[(r % 7) * 7 + c % 7], noisy_background) {
                (true, _) => rng.random_range(180..=255),
                (false, true) => rng.random_range(40..120),
                (false, false) => rng.random_range(0..20),
            }
        })
        .collect()
}

fn main() -> hierot::Result<()> {
    let dir = std::env::temp_dir().join("hierot_idx_example");
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let textures: Vec<[bool; 49]> = (0..10).map(|_| std::array::from_fn(|_| rng.random_bool(0.4))).collect();
    for (name, noisy) in [("source", false), ("target", true)] {
        let labels: Vec<u8> = (0..400).map(|i| (i % 10) as u8).collect();
        let images: Vec<Vec<u8>> = labels.iter().map(|&y| digit(&textures, y, noisy, &mut rng)).collect();
        write_idx_images(&dir.join(format!("{name}-images.idx")), &images, 28, 28)?;
        write_idx_labels(&dir.join(format!("{name}-labels.idx")), &labels)?;
    }

    let load = |name: &str, domain| load_idx_digits(&dir.join(format!("{name}-images.idx")), &dir.join(format!("{name}-labels.idx")), 12, (4, 4), domain);
    let source = load("source", Domain::Source)?;
    let target = load("target", Domain::Target)?;
    let (k, d) = source.grid_shape().expect("non-empty");
    println!("{} source and {} target images as {k} patches of {d} pixels", source.len(), target.len());

    let path = |name: &str| dir.join(format!("{name}.idx"));
    let mut cfg = ExperimentConfig::default();
    cfg.data = DataConfig::Idx {
        source_images: path("source-images"),
        source_labels: path("source-labels"),
        target_images: path("target-images"),
        target_labels: path("target-labels"),
        downsample_to: 12,
        patch_grid: (4, 4),
    };
    cfg.model = ModelDims { input_dim: d, classes: 10, ..ModelDims::default() };
    cfg.iterations = 300;
    cfg.eval_interval = 100;
    let report = run_training(&cfg)?;
    println!(
        "source accuracy {:.3}, target accuracy {:.3} (after pretraining {:.3})",
        report.source_accuracy, report.target_accuracy, report.initial_target_accuracy
    );
    Ok(())
}
