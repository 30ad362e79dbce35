use std::path::{Path, PathBuf};

use gits_core::diagnostics::{BandEdges, DEFAULT_BINS, DEFAULT_PROBE_LR};
use gits_core::scoring::DEFAULT_PILOT_EPOCHS;
use gits_core::selector::{DEFAULT_C_WIN, DEFAULT_LAMBDA_COV};
use gits_core::{CoverageConfig, GitsError, Result, SamplerKind, SolverConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Concurrent cells; 0 uses every available core.
    pub workers: usize,
    pub ratios: Vec<f64>,
    pub samplers: Vec<SamplerKind>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub pilot: PilotConfig,
    pub objective: ObjectiveSection,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Read this dataset instead of generating one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub n_traj: usize,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PilotConfig {
    pub epochs: usize,
    pub horizon: usize,
    pub batch_traj: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub lambda_cov: f64,
    pub c_win: f64,
    pub normalize_scores: bool,
    /// Fixed kernel parameters; derived from `(T_c, K)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub bands: BandEdges,
    pub bins: usize,
    pub probe_lr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("results"),
            workers: 0,
            ratios: vec![0.05, 0.10, 0.20],
            samplers: SamplerKind::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            dataset: DatasetConfig::default(),
            pilot: PilotConfig::default(),
            objective: ObjectiveSection::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            n_traj: 60,
            solver: SolverConfig::default(),
        }
    }
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_PILOT_EPOCHS,
            horizon: 10,
            batch_traj: 32,
        }
    }
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            lambda_cov: DEFAULT_LAMBDA_COV,
            c_win: DEFAULT_C_WIN,
            normalize_scores: false,
            coverage: None,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bands: BandEdges::default(),
            bins: DEFAULT_BINS,
            probe_lr: DEFAULT_PROBE_LR,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GitsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GitsError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(GitsError::Config("ratios must be nonempty".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(GitsError::Config(format!("ratio {r} outside (0, 1]")));
        }
        if self.seeds.is_empty() {
            return Err(GitsError::Config("seeds must be nonempty".into()));
        }
        if self.samplers.is_empty() {
            return Err(GitsError::Config("samplers must be nonempty".into()));
        }
        if self.pilot.epochs == 0 || self.pilot.horizon == 0 || self.pilot.batch_traj == 0 {
            return Err(GitsError::Config("pilot epochs, horizon and batch_traj must be >= 1".into()));
        }
        if !(self.objective.lambda_cov >= 0.0 && self.objective.c_win >= 0.0) {
            return Err(GitsError::Config("objective weights must be non-negative".into()));
        }
        if let Some(c) = &self.objective.coverage {
            c.validate()?;
        }
        if self.metrics.bins == 0 {
            return Err(GitsError::Config("metrics.bins must be >= 1".into()));
        }
        self.metrics.bands.validate()?;
        self.train.validate()?;
        if self.dataset.path.is_none() {
            self.dataset.solver.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "ratios = [0.1]\nsamplers = [\"gits\", \"loss_only\"]\n[train]\nepochs_max = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.ratios, vec![0.1]);
        assert_eq!(cfg.samplers, vec![SamplerKind::Gits, SamplerKind::LossOnly]);
        assert_eq!(cfg.train.epochs_max, 7);
        assert_eq!(cfg.train.patience, 5);
        assert_eq!(cfg.pilot, PilotConfig::default());
    }

    #[test]
    fn rejects_invalid_configs() {
        for text in [
            "ratios = []",
            "ratios = [0.0]",
            "ratios = [1.5]",
            "seeds = []",
            "samplers = [\"glister\"]",
            "unknown_key = 1",
            "[pilot]\nepochs = 0",
            "[objective]\nlambda_cov = -1.0",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(GitsError::Config(_))),
                "{text}"
            );
        }
    }
}
