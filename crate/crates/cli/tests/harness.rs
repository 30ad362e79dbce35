use std::fs;
use std::process::Command;

use gits_cli::experiment::{read_rows_csv, CSV_NAME, SUMMARY_NAME};
use gits_cli::{run_experiment, run_selftest, CellRow, ExperimentConfig, Hooks, Suite};
use gits_core::coverage::kernel_global;
use gits_core::data::{write_dataset, ChannelStats};
use gits_core::{Boundary, CandidateSet, SamplerKind, Split, TrajectoryDataset};

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.dataset.n_traj = 20;
    cfg.dataset.solver.t_count = 31;
    cfg.dataset.solver.spatial_size = 32;
    cfg.train.epochs_max = 12;
    cfg.pilot.epochs = 2;
    cfg.pilot.batch_traj = 8;
    cfg
}

fn strip_timing(rows: &[CellRow]) -> Vec<CellRow> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            r.selection_time_s = None;
            r.train_time_s = None;
            r
        })
        .collect()
}

#[test]
fn single_cell_config_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.ratios = vec![0.1];
    cfg.samplers = vec![SamplerKind::Gits];
    cfg.seeds = vec![1];
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.failures(), 0);
    let rows = read_rows_csv(&dir.path().join(CSV_NAME)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].sampler, SamplerKind::Gits);
    assert!(rows[0].nrmse.unwrap().is_finite());

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_NAME)).unwrap()).unwrap();
    assert!(json["wins"].is_null());
    assert_eq!(json["cells"].as_array().unwrap().len(), 1);
    assert_eq!(json["aggregates"]["gits"]["0.1"]["n"], 1);
    assert!(json["config_echo"]["ratios"].is_array());
}

#[test]
fn grid_is_deterministic_and_seeds_are_isolated() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small_config(a.path());
    cfg.ratios = vec![0.1, 0.2];
    cfg.samplers = vec![SamplerKind::Gits, SamplerKind::Uniform, SamplerKind::GradMatch];
    cfg.seeds = vec![0, 1];
    let first = run_experiment(&cfg).unwrap();
    assert_eq!(first.failures(), 0);
    cfg.output_dir = b.path().to_path_buf();
    cfg.workers = 1;
    let second = run_experiment(&cfg).unwrap();
    assert_eq!(strip_timing(&first.rows()), strip_timing(&second.rows()));

    let candidates = CandidateSet::build(31, 4).unwrap();
    for row in first.rows() {
        let expect = ((row.ratio * candidates.len() as f64).round() as usize).max(1);
        assert_eq!(row.k, expect);
        assert!(row.selection_time_s.is_some() && row.train_time_s.is_some());
    }

    cfg.seeds = vec![1];
    let only = run_experiment(&cfg).unwrap();
    let seed1: Vec<CellRow> = first.rows().into_iter().filter(|r| r.seed == 1).collect();
    assert_eq!(strip_timing(&only.rows()), strip_timing(&seed1));
}

fn zero_dataset(dir: &std::path::Path) -> std::path::PathBuf {
    let (n, t, cells) = (10, 12, 16);
    let split = (0..n)
        .map(|i| match i {
            0 => Split::Val,
            1 => Split::Test,
            _ => Split::Train,
        })
        .collect();
    let ds = TrajectoryDataset::new(
        vec![0.0; n * t * cells],
        n,
        t,
        cells,
        1,
        split,
        vec![ChannelStats { mean: 0.0, std: 1.0 }],
        Boundary::Periodic,
    )
    .unwrap();
    let path = dir.join("zeros");
    write_dataset(&ds, &path).unwrap();
    path
}

#[test]
fn stage_failures_are_recorded_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.dataset.path = Some(zero_dataset(dir.path()));
    cfg.ratios = vec![0.1];
    cfg.seeds = vec![0];
    cfg.samplers = vec![SamplerKind::Uniform, SamplerKind::Gits];
    // All-zero validation targets make the early-stopping metric undefined.
    let out = run_experiment(&cfg).unwrap();
    let rows = out.rows();
    assert_eq!(rows.len(), 2);
    assert_eq!(out.failures(), 2);
    for row in &rows {
        assert!(row.error.as_deref().unwrap().starts_with("train"), "{:?}", row.error);
        assert!(row.nrmse.is_none());
        assert!(row.selection_time_s.is_some());
        assert_eq!(row.dataset, "zeros");
    }
    let summary = &out.summary.aggregates["gits"]["0.1"];
    assert_eq!((summary.n, summary.mean), (0, None));

    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let status = gits().args(["--config", cfg_path.to_str().unwrap(), "run"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

fn flipped(i: usize, j: usize, tau: f64) -> f64 {
    -kernel_global(i, j, tau)
}

#[test]
fn selftest_catches_a_sign_flipped_kernel() {
    let clean = run_selftest(&Suite::ALL, Hooks::default());
    assert!(clean.passed(), "{clean}");

    let mutated = run_selftest(&[Suite::Submodularity], Hooks { kernel: flipped });
    assert!(!mutated.passed());
}

fn gits() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gits"))
}

#[test]
fn binary_exit_codes() {
    let out = gits().arg("print-defaults").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());

    let out = gits().args(["selftest", "--none"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 suites, 0 failed"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "ratios = [2.0]\n").unwrap();
    let out = gits().args(["--config", bad.to_str().unwrap(), "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = gits().args(["--sampler", "nope", "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_stages_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    let mut cfg = small_config(dir.path());
    cfg.samplers = vec![SamplerKind::Gits, SamplerKind::Uniform];
    cfg.seeds = vec![0];
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let c = cfg_path.to_str().unwrap();

    let ok = |args: &[&str]| {
        let out = gits().args(["--config", c]).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["generate"]);
    assert!(dir.path().join("dataset.json").exists() && dir.path().join("dataset.f32").exists());
    ok(&["select", "--ratio", "0.2"]);
    for f in ["selection_gits.json", "selection_uniform.json", "scores_grad_norm.csv", "windows.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let sel = dir.path().join("selection_gits.json");
    ok(&["train", "--selection", sel.to_str().unwrap()]);
    let ckpt = dir.path().join("surrogate_gits_seed0.ckpt");
    let report = ok(&["evaluate", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(report.contains("\"nrmse\""));

    let run = ok(&["run"]);
    assert!(run.contains("gits wins"));
    let csv = dir.path().join(CSV_NAME);
    let cmp = ok(&["compare", "--results", csv.to_str().unwrap()]);
    assert!(cmp.contains("uniform"));
}
