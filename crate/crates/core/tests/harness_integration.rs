//! End-to-end checks of the training harness and the command-line tool.

use std::process::Command;

use hierot::data::{gen_synthetic_pair, Domain, LabeledDataset, ShiftSpec};
use hierot::harness::{
    evaluate, run_batch_size_sweep, run_projection_sweep, run_training, train_on, DataConfig, ExperimentConfig,
    Preset,
};
use hierot::model::{Checkpoint, ModelParams};

fn small(iterations: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    if let DataConfig::Synthetic { n_source, n_target, .. } = &mut cfg.data {
        *n_source = 300;
        *n_target = 300;
    }
    cfg.iterations = iterations;
    cfg.eval_interval = 50;
    cfg.pretrain_epochs = 3;
    cfg
}

#[test]
fn zero_iterations_reports_the_source_only_model() {
    let report = run_training(&small(0)).unwrap();
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.records[0].iteration, 0);
    assert_eq!(report.target_accuracy, report.initial_target_accuracy);
}

#[test]
fn records_are_monotone_and_objective_bounds_transport() {
    let report = run_training(&small(120)).unwrap();
    let iters: Vec<usize> = report.records.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, vec![50, 100, 120]);
    for r in &report.records {
        assert!(r.objective >= r.transport - 1e-12, "{} < {}", r.objective, r.transport);
    }
}

#[test]
fn domain_level_only_configuration_runs() {
    let cfg = small(50).with_preset(Preset::UotPooledCe);
    assert_eq!(cfg.effective_etas()[0], 0.0);
    run_training(&cfg).unwrap();
}

#[test]
fn evaluation_on_source_after_pretraining_is_high() {
    let mut cfg = ExperimentConfig::default();
    cfg.iterations = 0;
    let report = run_training(&cfg).unwrap();
    assert!(report.source_accuracy >= 0.95, "{}", report.source_accuracy);
}

#[test]
fn uniform_classifier_scores_near_chance_and_empty_data_errors() {
    let cfg = small(0);
    let mut model = ModelParams::init(cfg.model, 0).unwrap();
    model.classifier.weight.fill(0.0);
    model.classifier.bias.fill(0.0);
    let ckpt = Checkpoint::from_model(&model, None);
    let spec = ShiftSpec::background_swap(9, 4, 5, 2, 0.0, 1.5, 0.2).unwrap();
    let (_, target) = gen_synthetic_pair(&spec, 5, 10, 500, 4).unwrap();
    let acc = evaluate(&ckpt, &target).unwrap();
    assert!((acc - 0.2).abs() < 0.06, "{acc}");
    let empty = LabeledDataset::new(vec![], vec![], Domain::Target, 5).unwrap();
    assert!(evaluate(&ckpt, &empty).is_err());
}

#[test]
fn identical_configs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let mut cfg = small(100);
        cfg.output_dir = Some(dir.path().join(format!("run{run}")));
        run_training(&cfg).unwrap();
        files.push(std::fs::read(dir.path().join(format!("run{run}/metrics.csv"))).unwrap());
    }
    assert_eq!(files[0], files[1]);
    for f in ["summary.json", "config.resolved.json", "checkpoint.json"] {
        assert!(dir.path().join("run0").join(f).exists(), "{f}");
    }
}

#[test]
fn checkpoint_reproduces_final_accuracy() {
    let cfg = small(50);
    let spec = ShiftSpec::background_swap(9, 4, 5, 2, 0.0, 1.5, 0.2).unwrap();
    let (source, target) = gen_synthetic_pair(&spec, 5, 300, 300, 0).unwrap();
    let report = train_on(&cfg, &source, &target).unwrap();
    assert_eq!(evaluate(&report.checkpoint, &target).unwrap(), report.target_accuracy);
}

#[test]
fn sweep_argument_checks_and_degenerate_runs() {
    let cfg = small(20);
    assert!(run_batch_size_sweep(&cfg, &[10], 1, 1, false).is_err());
    assert!(run_projection_sweep(&cfg, &[], 1, 1, false).is_err());
    let single = run_projection_sweep(&cfg, &[16], 1, 1, false).unwrap();
    assert_eq!(single.mean_accuracy.len(), 1);
    assert_eq!(single.spread, 0.0);
    run_projection_sweep(&cfg, &[1], 1, 1, false).unwrap();
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hierot")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let sizes = ["--set", "data.n_source=200", "--set", "data.n_target=200", "--set", "pretrain_epochs=2"];

    let ok = [&["train", "--out-dir", out, "--emit-plot-data", "--set", "iterations=20"][..], &sizes[..]].concat();
    let (code, stdout) = cli(&ok);
    assert_eq!(code, 0, "{stdout}");
    assert!(dir.path().join("plot_data.csv").exists());
    let ckpt = dir.path().join("checkpoint.json");
    let (code, stdout) = cli(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--set", "data.n_target=50"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("accuracy"));

    assert_eq!(cli(&["train", "--set", "no_such_key=1"]).0, 2);
    assert_eq!(cli(&["train", "--config", "/nonexistent/config.json"]).0, 2);
    let idx = [
        "train",
        "--set",
        r#"data={"kind":"idx","source_images":"/nonexistent/a","source_labels":"/nonexistent/b","target_images":"/nonexistent/c","target_labels":"/nonexistent/d","downsample_to":12,"patch_grid":[4,4]}"#,
        "--set",
        "model.input_dim=9",
        "--set",
        "model.classes=10",
    ];
    assert_eq!(cli(&idx).0, 3);
    let diverge = [
        &["train", "--out-dir", out, "--set", "iterations=20", "--set", "sinkhorn.max_iterations=1"][..],
        &sizes[..],
    ]
    .concat();
    assert_eq!(cli(&diverge).0, 4);
}

fn synthetic(spec: ShiftSpec, n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data = DataConfig::Synthetic {
        shift: spec,
        class_count: 5,
        n_source: n,
        n_target: n,
    };
    cfg.iterations = 0;
    cfg
}

#[test]
fn no_shift_means_no_transfer_gap() {
    let report = run_training(&synthetic(ShiftSpec::identity(9, 4, 0.5), 2000)).unwrap();
    let gap = (report.source_accuracy - report.target_accuracy).abs();
    assert!(gap < 0.03, "source {} target {}", report.source_accuracy, report.target_accuracy);
}

#[test]
fn purely_local_signal_is_learnable_without_a_mean_difference() {
    let spec = ShiftSpec::identity(9, 4, 1.0);
    let (source, target) = gen_synthetic_pair(&spec, 5, 2000, 2000, 0).unwrap();
    // Every class has the same expected pooled mean (zero), so the
    // class centroids agree up to sampling error.
    for idx in source.class_indices() {
        let centroid = idx
            .iter()
            .map(|&i| source.samples()[i].mean())
            .fold(ndarray::Array1::<f64>::zeros(4), |a, m| a + m)
            / idx.len() as f64;
        let norm = centroid.mapv(|v| v * v).sum().sqrt();
        assert!(norm < 0.1, "class centroid norm {norm}");
    }
    let report = train_on(&synthetic(spec, 2000), &source, &target).unwrap();
    assert!(report.target_accuracy > 0.4, "{}", report.target_accuracy);
}
