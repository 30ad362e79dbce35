use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gits_cli::experiment::{
    build_pilot, dataset_name, load_dataset, objective_for, read_rows_csv, run_experiment, select_cell,
    train_cell,
};
use gits_cli::{compare_report, render_text, run_selftest, ExperimentConfig, Hooks, Suite};
use gits_core::coverage::WindowList;
use gits_core::data::write_dataset;
use gits_core::diagnostics::{evaluate_rollout, subset_geometry};
use gits_core::surrogate::{read_checkpoint, write_checkpoint};
use gits_core::{stage_seed, Arch, CandidateSet, GitsError, SamplerKind, SelectionResult, Split};

#[derive(Parser)]
#[command(name = "gits", version, about = "Gradient-informed temporal sampling for PDE surrogates")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Restrict to a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to one sampler.
    #[arg(long, global = true)]
    sampler: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    Generate,
    /// Score candidates and select starts for one ratio.
    Select {
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Train a surrogate on a saved selection.
    Train {
        #[arg(long)]
        selection: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the full experiment grid.
    Run,
    /// Run the oracle self-test suites.
    Selftest {
        /// Suites to run (greedy, coverage, submodularity, gradient); all by default.
        #[arg(long = "suite")]
        suites: Vec<String>,
        /// Run no suites.
        #[arg(long, conflicts_with = "suites")]
        none: bool,
    },
    /// Print the full default config as TOML.
    PrintDefaults,
    /// Summarize an existing results CSV.
    Compare {
        #[arg(long)]
        results: PathBuf,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<GitsError> for Failure {
    fn from(e: GitsError) -> Self {
        match e {
            GitsError::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(name) = &cli.sampler {
        cfg.samplers = vec![name.parse::<SamplerKind>()?];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(GitsError::from)?;
    fs::write(path, text + "\n").map_err(GitsError::from)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode, Failure> {
    match &cli.command {
        Command::PrintDefaults => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { suites, none } => {
            let chosen: Vec<Suite> = if *none {
                Vec::new()
            } else if suites.is_empty() {
                Suite::ALL.to_vec()
            } else {
                suites.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
            };
            let report = run_selftest(&chosen, Hooks::default());
            println!("{report}");
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Compare { results } => {
            let rows = read_rows_csv(results)?;
            let summary = compare_report(&rows);
            print!("{}", render_text(&summary));
            if let Some(o) = &cli.output {
                fs::create_dir_all(o).map_err(GitsError::from)?;
                write_json(&o.join("compare.json"), &summary)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate => {
            let cfg = load_config(&cli)?;
            let ds = load_dataset(&cfg)?;
            fs::create_dir_all(&cfg.output_dir).map_err(GitsError::from)?;
            let path = cfg.output_dir.join("dataset");
            write_dataset(&ds, &path)?;
            println!(
                "wrote {} ({} trajectories, T_c={}, {} cells)",
                path.display(),
                ds.n_traj(),
                ds.t_count(),
                ds.spatial_size()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Select { ratio } => {
            let cfg = load_config(&cli)?;
            let ds = load_dataset(&cfg)?;
            let ratio = ratio.unwrap_or(cfg.ratios[0]);
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Failure::Config(format!("ratio {ratio} outside (0, 1]")));
            }
            let seed = cfg.seeds[0];
            let candidates = CandidateSet::build(ds.t_count(), Arch::for_dataset(&ds).history_len)?;
            let budget = candidates.budget_for_ratio(ratio);
            let need_pilot = cfg.samplers.iter().any(|s| s.needs_pilot());
            let pilot = if need_pilot {
                Some(build_pilot(&cfg, &ds, &candidates, seed)?)
            } else {
                None
            };
            let out = &cfg.output_dir;
            fs::create_dir_all(out).map_err(GitsError::from)?;
            if let Some(p) = &pilot {
                p.grad_scores
                    .write_csv(&candidates, fs::File::create(out.join("scores_grad_norm.csv")).map_err(GitsError::from)?)?;
                p.loss_scores
                    .write_csv(&candidates, fs::File::create(out.join("scores_rollout_loss.csv")).map_err(GitsError::from)?)?;
            }
            let obj = objective_for(&cfg, ds.t_count(), budget)?;
            WindowList::build(&candidates, &obj.coverage)?
                .write_csv(fs::File::create(out.join("windows.csv")).map_err(GitsError::from)?)?;
            for &sampler in &cfg.samplers {
                let mut sel = select_cell(&cfg, &candidates, pilot.as_ref(), sampler, budget, seed)?;
                if sampler.needs_pilot() {
                    sel.wall_time_s += pilot.as_ref().map_or(0.0, |p| p.time_s);
                }
                let geo = subset_geometry(&sel.selected, &[], &candidates, cfg.metrics.bins)?;
                let path = out.join(format!("selection_{}.json", sampler.name()));
                write_json(&path, &sel)?;
                println!(
                    "{:<14} K={budget} entropy={:.3} coverage={:.2} -> {}",
                    sampler.name(),
                    geo.entropy,
                    geo.coverage_frac,
                    path.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { selection } => {
            let cfg = load_config(&cli)?;
            let ds = load_dataset(&cfg)?;
            let text = fs::read_to_string(selection).map_err(GitsError::from)?;
            let sel: SelectionResult = serde_json::from_str(&text).map_err(GitsError::from)?;
            let seed = cfg.seeds[0];
            let params = train_cell(&cfg, &ds, &sel.sorted(), seed)?;
            fs::create_dir_all(&cfg.output_dir).map_err(GitsError::from)?;
            let path = cfg
                .output_dir
                .join(format!("surrogate_{}_seed{seed}.ckpt", sel.sampler.name()));
            write_checkpoint(&params, &path, stage_seed(seed, "train"), cfg.train.epochs_max)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { checkpoint } => {
            let cfg = load_config(&cli)?;
            let ds = load_dataset(&cfg)?;
            let (params, _) = read_checkpoint(checkpoint)?;
            let report = evaluate_rollout(&params, &ds, Split::Test, cfg.metrics.bands)?;
            println!("dataset: {}", dataset_name(&cfg, &ds));
            println!("{}", serde_json::to_string_pretty(&report).map_err(GitsError::from)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run => {
            let cfg = load_config(&cli)?;
            let outcome = run_experiment(&cfg)?;
            print!("{}", render_text(&outcome.summary));
            let failed = outcome.failures();
            for c in outcome.cells.iter().filter(|c| c.row.failed()) {
                eprintln!(
                    "cell {} ratio={} seed={} failed: {}",
                    c.row.sampler,
                    c.row.ratio,
                    c.row.seed,
                    c.row.error.as_deref().unwrap_or("")
                );
            }
            println!("results in {}", cfg.output_dir.display());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
