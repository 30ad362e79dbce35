use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use gits_core::data::{generate_dataset, read_dataset};
use gits_core::diagnostics::evaluate_rollout;
use gits_core::scoring::{score_both, train_pilot};
use gits_core::selector::{run_sampler, SamplerInputs};
use gits_core::surrogate::train;
use gits_core::{
    stage_seed, Arch, CandidateScores, CandidateSet, GitsError, ObjectiveConfig, Result, RolloutReport,
    SamplerKind, ScoringConfig, SelectionResult, Split, SurrogateParams, TrainConfig, TrajectoryDataset,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::report::{compare_report, Summary};

pub const CSV_NAME: &str = "results.csv";
pub const SUMMARY_NAME: &str = "summary.json";

/// One `(ratio, sampler, seed)` cell of the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub dataset: String,
    pub sampler: SamplerKind,
    pub ratio: f64,
    pub seed: u64,
    pub k: usize,
    pub nrmse: Option<f64>,
    pub crmse: Option<f64>,
    pub brmse: Option<f64>,
    pub frmse_low: Option<f64>,
    pub frmse_mid: Option<f64>,
    pub frmse_high: Option<f64>,
    pub selection_time_s: Option<f64>,
    pub train_time_s: Option<f64>,
    pub error: Option<String>,
}

impl CellRow {
    fn new(dataset: &str, sampler: SamplerKind, ratio: f64, seed: u64, k: usize) -> Self {
        Self {
            dataset: dataset.to_string(),
            sampler,
            ratio,
            seed,
            k,
            nrmse: None,
            crmse: None,
            brmse: None,
            frmse_low: None,
            frmse_mid: None,
            frmse_high: None,
            selection_time_s: None,
            train_time_s: None,
            error: None,
        }
    }

    fn fill(&mut self, r: &RolloutReport) {
        self.nrmse = Some(r.nrmse);
        self.crmse = Some(r.crmse);
        self.brmse = Some(r.brmse);
        self.frmse_low = Some(r.frmse_low);
        self.frmse_mid = Some(r.frmse_mid);
        self.frmse_high = Some(r.frmse_high);
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// A cell plus its chosen starts, for the JSON summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    #[serde(flatten)]
    pub row: CellRow,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub config_echo: ExperimentConfig,
    pub cells: Vec<CellRecord>,
    #[serde(flatten)]
    pub summary: Summary,
}

impl ExperimentOutcome {
    pub fn rows(&self) -> Vec<CellRow> {
        self.cells.iter().map(|c| c.row.clone()).collect()
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.row.failed()).count()
    }
}

/// Pilot-derived inputs shared by every cell of one seed.
pub struct PilotArtifacts {
    pub params: SurrogateParams,
    pub grad_scores: CandidateScores,
    pub loss_scores: CandidateScores,
    pub gradients: Vec<Vec<f64>>,
    /// Pilot training plus scoring.
    pub time_s: f64,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<TrajectoryDataset> {
    match &cfg.dataset.path {
        Some(p) => read_dataset(p),
        None => generate_dataset(&cfg.dataset.solver, cfg.dataset.n_traj),
    }
}

pub fn dataset_name(cfg: &ExperimentConfig, ds: &TrajectoryDataset) -> String {
    if let Some(p) = &cfg.dataset.path {
        if let Some(stem) = p.file_stem() {
            return stem.to_string_lossy().into_owned();
        }
    }
    ds.family().map_or("dataset", |f| f.name()).to_string()
}

pub fn scoring_config(cfg: &ExperimentConfig, seed: u64) -> ScoringConfig {
    ScoringConfig {
        horizon: cfg.pilot.horizon,
        batch_traj: cfg.pilot.batch_traj,
        seed: stage_seed(seed, "scoring"),
    }
}

pub fn build_pilot(
    cfg: &ExperimentConfig,
    ds: &TrajectoryDataset,
    candidates: &CandidateSet,
    seed: u64,
) -> Result<PilotArtifacts> {
    let start = Instant::now();
    let init = SurrogateParams::init_persistence(Arch::for_dataset(ds), stage_seed(seed, "pilot-init"));
    let pilot_cfg = TrainConfig {
        epochs_max: cfg.pilot.epochs,
        seed: stage_seed(seed, "pilot"),
        ..cfg.train.clone()
    };
    let params = train_pilot(&init, ds, candidates, &pilot_cfg)?;
    let (grad_scores, loss_scores, gradients) =
        score_both(&params, candidates, ds, &scoring_config(cfg, seed), cfg.pilot.epochs)?;
    Ok(PilotArtifacts {
        params,
        grad_scores,
        loss_scores,
        gradients,
        time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn objective_for(cfg: &ExperimentConfig, t_count: usize, budget: usize) -> Result<ObjectiveConfig> {
    let mut obj = ObjectiveConfig::derived(t_count, budget, cfg.objective.lambda_cov, cfg.objective.c_win)?;
    if let Some(c) = cfg.objective.coverage {
        obj.coverage = c;
    }
    obj.normalize_scores = cfg.objective.normalize_scores;
    Ok(obj)
}

/// Selects `K` starts for one cell. Pilot-based samplers need `pilot`.
pub fn select_cell(
    cfg: &ExperimentConfig,
    candidates: &CandidateSet,
    pilot: Option<&PilotArtifacts>,
    sampler: SamplerKind,
    budget: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let objective = objective_for(cfg, candidates.t_count(), budget)?;
    let inputs = SamplerInputs {
        candidates,
        objective: &objective,
        grad_scores: pilot.map(|p| &p.grad_scores),
        loss_scores: pilot.map(|p| &p.loss_scores),
        gradients: pilot.map(|p| p.gradients.as_slice()),
        seed,
    };
    run_sampler(sampler, &inputs, budget)
}

/// Trains the downstream surrogate on `D(starts)` with the seed's shared
/// initialization.
pub fn train_cell(cfg: &ExperimentConfig, ds: &TrajectoryDataset, starts: &[usize], seed: u64) -> Result<SurrogateParams> {
    let init = SurrogateParams::init_persistence(Arch::for_dataset(ds), stage_seed(seed, "init"));
    let train_cfg = TrainConfig {
        seed: stage_seed(seed, "train"),
        ..cfg.train.clone()
    };
    Ok(train(&init, starts, ds, &train_cfg)?.params)
}

struct CellJob {
    ratio: f64,
    sampler: SamplerKind,
    seed: u64,
    budget: usize,
}

fn run_cell(
    cfg: &ExperimentConfig,
    ds: &TrajectoryDataset,
    name: &str,
    candidates: &CandidateSet,
    pilots: &BTreeMap<u64, std::result::Result<PilotArtifacts, String>>,
    job: &CellJob,
) -> CellRecord {
    let mut row = CellRow::new(name, job.sampler, job.ratio, job.seed, job.budget);
    let mut selected = Vec::new();
    let outcome = (|| -> std::result::Result<(), String> {
        let pilot = if job.sampler.needs_pilot() {
            match pilots.get(&job.seed) {
                Some(Ok(p)) => Some(p),
                Some(Err(e)) => return Err(format!("pilot: {e}")),
                None => return Err("pilot missing".into()),
            }
        } else {
            None
        };
        let sel = select_cell(cfg, candidates, pilot, job.sampler, job.budget, job.seed)
            .map_err(|e| format!("select: {e}"))?;
        row.selection_time_s = Some(sel.wall_time_s + pilot.map_or(0.0, |p| p.time_s));
        selected = sel.selected.clone();

        let start = Instant::now();
        let params = train_cell(cfg, ds, &sel.sorted(), job.seed).map_err(|e| format!("train: {e}"))?;
        row.train_time_s = Some(start.elapsed().as_secs_f64());

        let report = evaluate_rollout(&params, ds, Split::Test, cfg.metrics.bands)
            .map_err(|e| format!("evaluate: {e}"))?;
        row.fill(&report);
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e);
    }
    CellRecord { row, selected }
}

/// Runs the full `(ratio, sampler, seed)` grid on an in-memory dataset.
/// Stage failures are recorded per cell.
pub fn run_grid(cfg: &ExperimentConfig, ds: &TrajectoryDataset) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let name = dataset_name(cfg, ds);
    let candidates = CandidateSet::build(ds.t_count(), Arch::for_dataset(ds).history_len)?;

    let mut jobs = Vec::new();
    for &ratio in &cfg.ratios {
        let budget = candidates.budget_for_ratio(ratio);
        for &sampler in &cfg.samplers {
            for &seed in &cfg.seeds {
                jobs.push(CellJob {
                    ratio,
                    sampler,
                    seed,
                    budget,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| GitsError::Config(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        let need_pilot = cfg.samplers.iter().any(|s| s.needs_pilot());
        let pilots: BTreeMap<u64, std::result::Result<PilotArtifacts, String>> = if need_pilot {
            cfg.seeds
                .par_iter()
                .map(|&s| (s, build_pilot(cfg, ds, &candidates, s).map_err(|e| e.to_string())))
                .collect()
        } else {
            BTreeMap::new()
        };
        jobs.par_iter()
            .map(|job| run_cell(cfg, ds, &name, &candidates, &pilots, job))
            .collect::<Vec<_>>()
    });

    let rows: Vec<CellRow> = cells.iter().map(|c| c.row.clone()).collect();
    Ok(ExperimentOutcome {
        config_echo: cfg.clone(),
        cells,
        summary: compare_report(&rows),
    })
}

/// Loads or generates the dataset, runs the grid and writes
/// `results.csv` and `summary.json` to `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let outcome = run_grid(cfg, &ds)?;
    write_outputs(&outcome, &cfg.output_dir)?;
    Ok(outcome)
}

pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows_csv(&outcome.rows(), fs::File::create(dir.join(CSV_NAME))?)?;
    let json = serde_json::to_string_pretty(outcome)?;
    fs::write(dir.join(SUMMARY_NAME), json + "\n")?;
    Ok(())
}

pub fn write_rows_csv<W: std::io::Write>(rows: &[CellRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<CellRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(GitsError::from)).collect()
}
