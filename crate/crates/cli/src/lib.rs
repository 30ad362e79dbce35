//! Experiment harness for `gits-core`: TOML configs, the seeded
//! `(ratio, sampler, seed)` grid runner, result summaries and the
//! oracle self-test.

pub mod config;
pub mod experiment;
pub mod report;
pub mod selftest;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, run_grid, CellRow, ExperimentOutcome};
pub use report::{compare_report, render_text, Summary};
pub use selftest::{run_selftest, Hooks, SelftestReport, Suite};
