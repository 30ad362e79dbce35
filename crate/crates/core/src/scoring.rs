//! Candidate start indices, pilot training and pointwise candidate scores.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Split, TrajectoryDataset};
use crate::error::{GitsError, Result};
use crate::surrogate::{rollout_loss_grad, train, SurrogateParams, TrainConfig};

/// Admissible start indices `{k : L ≤ k ≤ T_c − 2}`, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    indices: Vec<usize>,
    t_count: usize,
    history_len: usize,
}

impl CandidateSet {
    pub fn build(t_count: usize, history_len: usize) -> Result<Self> {
        if t_count < history_len + 2 {
            return Err(GitsError::EmptyCandidates {
                t_count,
                history_len,
            });
        }
        Ok(Self {
            indices: (history_len..=t_count - 2).collect(),
            t_count,
            history_len,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn first(&self) -> usize {
        self.indices[0]
    }

    pub fn last(&self) -> usize {
        self.indices[self.indices.len() - 1]
    }

    /// Position of start index `k` in [`indices`](Self::indices).
    pub fn position(&self, k: usize) -> Option<usize> {
        (self.first()..=self.last()).contains(&k).then(|| k - self.first())
    }

    pub fn contains(&self, k: usize) -> bool {
        self.position(k).is_some()
    }

    /// Budget implied by a sampling ratio: `max(1, round(ratio·|C|))`,
    /// capped at `|C|`.
    pub fn budget_for_ratio(&self, ratio: f64) -> usize {
        ((ratio * self.len() as f64).round() as usize).clamp(1, self.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    GradNorm,
    RolloutLoss,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::GradNorm => "grad_norm",
            ScoreKind::RolloutLoss => "rollout_loss",
        }
    }
}

/// Provenance of a score vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotMeta {
    pub epochs: usize,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    /// `scores[i]` belongs to `candidates.indices()[i]`.
    pub scores: Vec<f64>,
    pub kind: ScoreKind,
    pub pilot: PilotMeta,
}

impl CandidateScores {
    pub fn new(scores: Vec<f64>, kind: ScoreKind, pilot: PilotMeta) -> Result<Self> {
        if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(GitsError::Validation(format!(
                "candidate scores must be finite and non-negative, found {s}"
            )));
        }
        Ok(Self {
            scores,
            kind,
            pilot,
        })
    }

    /// Writes `k,score,kind,H,E_p,seed` rows.
    pub fn write_csv<W: Write>(&self, candidates: &CandidateSet, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "score", "kind", "H", "E_p", "seed"])?;
        for (&k, s) in candidates.indices().iter().zip(&self.scores) {
            w.write_record([
                k.to_string(),
                format!("{s:e}"),
                self.kind.name().to_string(),
                self.pilot.horizon.to_string(),
                self.pilot.epochs.to_string(),
                self.pilot.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Controls the short-rollout evaluation behind both score kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub horizon: usize,
    /// Training trajectories in the fixed scoring subsample.
    pub batch_traj: usize,
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            batch_traj: 32,
            seed: 0,
        }
    }
}

/// Default pilot budget in epochs.
pub const DEFAULT_PILOT_EPOCHS: usize = 5;

/// Trains the pilot on every candidate start for exactly `cfg.epochs_max`
/// epochs (early stopping is forced off).
pub fn train_pilot(
    init: &SurrogateParams,
    ds: &TrajectoryDataset,
    candidates: &CandidateSet,
    cfg: &TrainConfig,
) -> Result<SurrogateParams> {
    if cfg.epochs_max == 0 {
        return Err(GitsError::Config("pilot needs at least one epoch".into()));
    }
    let cfg = TrainConfig {
        early_stopping: false,
        ..cfg.clone()
    };
    Ok(train(init, candidates.indices(), ds, &cfg)?.params)
}

/// The trajectories every candidate is scored on: `batch_traj` training
/// trajectories drawn once from the scoring seed (all of them if fewer),
/// in ascending order.
pub fn scoring_subsample(ds: &TrajectoryDataset, batch_traj: usize, seed: u64) -> Result<Vec<usize>> {
    if batch_traj == 0 {
        return Err(GitsError::Config("batch_traj must be >= 1".into()));
    }
    let mut train = ds.trajectories(Split::Train);
    if train.is_empty() {
        return Err(GitsError::Config("dataset has no training trajectories".into()));
    }
    if train.len() > batch_traj {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::stage_seed(seed, "scoring-subsample"));
        train.shuffle(&mut rng);
        train.truncate(batch_traj);
        train.sort_unstable();
    }
    Ok(train)
}

/// Per-candidate short-rollout loss `ℓ_k` and gradient `g_k` at the pilot.
pub fn candidate_loss_grads(
    pilot: &SurrogateParams,
    candidates: &CandidateSet,
    ds: &TrajectoryDataset,
    cfg: &ScoringConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if cfg.horizon == 0 {
        return Err(GitsError::Config("scoring horizon must be >= 1".into()));
    }
    let subsample = scoring_subsample(ds, cfg.batch_traj, cfg.seed)?;
    candidates
        .indices()
        .par_iter()
        .map(|&k| {
            let batch: Vec<(usize, usize)> = subsample.iter().map(|&n| (n, k)).collect();
            rollout_loss_grad(pilot, &batch, cfg.horizon, ds)
        })
        .collect()
}

fn meta(pilot_epochs: usize, cfg: &ScoringConfig) -> PilotMeta {
    PilotMeta {
        epochs: pilot_epochs,
        horizon: cfg.horizon,
        seed: cfg.seed,
    }
}

/// Both score kinds from a single pass over the candidates.
pub fn score_both(
    pilot: &SurrogateParams,
    candidates: &CandidateSet,
    ds: &TrajectoryDataset,
    cfg: &ScoringConfig,
    pilot_epochs: usize,
) -> Result<(CandidateScores, CandidateScores, Vec<Vec<f64>>)> {
    let lg = candidate_loss_grads(pilot, candidates, ds, cfg)?;
    let loss = lg.iter().map(|(l, _)| *l).collect();
    let norms = lg.iter().map(|(_, g)| l2(g)).collect();
    let grads = lg.into_iter().map(|(_, g)| g).collect();
    Ok((
        CandidateScores::new(norms, ScoreKind::GradNorm, meta(pilot_epochs, cfg))?,
        CandidateScores::new(loss, ScoreKind::RolloutLoss, meta(pilot_epochs, cfg))?,
        grads,
    ))
}

/// `s_k = ‖∇ℓ_k(θ_p)‖₂`.
pub fn score_grad_norm(
    pilot: &SurrogateParams,
    candidates: &CandidateSet,
    ds: &TrajectoryDataset,
    cfg: &ScoringConfig,
    pilot_epochs: usize,
) -> Result<CandidateScores> {
    let lg = candidate_loss_grads(pilot, candidates, ds, cfg)?;
    let scores = lg.iter().map(|(_, g)| l2(g)).collect();
    CandidateScores::new(scores, ScoreKind::GradNorm, meta(pilot_epochs, cfg))
}

/// `s_k = ℓ_k(θ_p)`.
pub fn score_rollout_loss(
    pilot: &SurrogateParams,
    candidates: &CandidateSet,
    ds: &TrajectoryDataset,
    cfg: &ScoringConfig,
    pilot_epochs: usize,
) -> Result<CandidateScores> {
    let lg = candidate_loss_grads(pilot, candidates, ds, cfg)?;
    let scores = lg.iter().map(|(l, _)| *l).collect();
    CandidateScores::new(scores, ScoreKind::RolloutLoss, meta(pilot_epochs, cfg))
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, CoefRange, SolverConfig};
    use crate::surrogate::{effective_horizon, Arch};

    #[test]
    fn candidate_set_bounds() {
        let c = CandidateSet::build(101, 4).unwrap();
        assert_eq!(c.len(), 96);
        assert_eq!((c.first(), c.last()), (4, 99));
        assert!(c.indices().windows(2).all(|w| w[1] == w[0] + 1));

        let c = CandidateSet::build(6, 4).unwrap();
        assert_eq!(c.indices(), &[4]);

        assert!(matches!(
            CandidateSet::build(5, 4),
            Err(GitsError::EmptyCandidates { .. })
        ));
    }

    #[test]
    fn budget_rounding() {
        let c = CandidateSet::build(101, 4).unwrap();
        assert_eq!(c.budget_for_ratio(0.05), 5);
        assert_eq!(c.budget_for_ratio(0.10), 10);
        assert_eq!(c.budget_for_ratio(0.20), 19);
        assert_eq!(c.budget_for_ratio(0.001), 1);
        assert_eq!(c.budget_for_ratio(1.0), 96);
    }

    #[test]
    fn positions_align_with_indices() {
        let c = CandidateSet::build(20, 4).unwrap();
        for (i, &k) in c.indices().iter().enumerate() {
            assert_eq!(c.position(k), Some(i));
        }
        assert_eq!(c.position(3), None);
        assert_eq!(c.position(19), None);
    }

    #[test]
    fn negative_scores_are_rejected() {
        let meta = PilotMeta {
            epochs: 1,
            horizon: 1,
            seed: 0,
        };
        assert!(CandidateScores::new(vec![1.0, -0.5], ScoreKind::GradNorm, meta).is_err());
        assert!(CandidateScores::new(vec![f64::NAN], ScoreKind::GradNorm, meta).is_err());
    }

    fn small_ds(frozen: bool) -> TrajectoryDataset {
        let mut cfg = SolverConfig {
            spatial_size: 16,
            t_count: 24,
            snapshot_stride: 10,
            seed: 1,
            ..SolverConfig::default()
        };
        if frozen {
            cfg.diffusivity = CoefRange::fixed(0.0);
        }
        generate_dataset(&cfg, 12).unwrap()
    }

    #[test]
    fn loss_scores_match_the_gradient_routine() {
        let ds = small_ds(false);
        let c = CandidateSet::build(ds.t_count(), 4).unwrap();
        let p = SurrogateParams::init(Arch::for_dataset(&ds), 4);
        let cfg = ScoringConfig {
            horizon: 4,
            batch_traj: 5,
            seed: 2,
        };
        let loss = score_rollout_loss(&p, &c, &ds, &cfg, 0).unwrap();
        let grad = score_grad_norm(&p, &c, &ds, &cfg, 0).unwrap();
        let sub = scoring_subsample(&ds, 5, 2).unwrap();
        assert_eq!(sub.len(), 5);
        for (i, &k) in c.indices().iter().enumerate() {
            let batch: Vec<_> = sub.iter().map(|&n| (n, k)).collect();
            let (l, g) = rollout_loss_grad(&p, &batch, 4, &ds).unwrap();
            assert_eq!(loss.scores[i], l);
            assert_eq!(grad.scores[i], l2(&g));
        }
        assert_eq!(loss, score_rollout_loss(&p, &c, &ds, &cfg, 0).unwrap());
    }

    #[test]
    fn tail_scores_use_the_truncated_horizon() {
        let ds = small_ds(false);
        let c = CandidateSet::build(ds.t_count(), 4).unwrap();
        let p = SurrogateParams::init(Arch::for_dataset(&ds), 6);
        let cfg = ScoringConfig {
            horizon: 10,
            batch_traj: 3,
            seed: 0,
        };
        let scores = score_grad_norm(&p, &c, &ds, &cfg, 0).unwrap();
        let sub = scoring_subsample(&ds, 3, 0).unwrap();
        for &k in &c.indices()[c.len() - 4..] {
            let hk = effective_horizon(10, ds.t_count(), k);
            assert!(hk < 10);
            let batch: Vec<_> = sub.iter().map(|&n| (n, k)).collect();
            let (_, g) = rollout_loss_grad(&p, &batch, hk, &ds).unwrap();
            assert_eq!(scores.scores[c.position(k).unwrap()], l2(&g));
        }
    }

    #[test]
    fn pilot_improves_on_frozen_dynamics() {
        let ds = small_ds(true);
        let c = CandidateSet::build(ds.t_count(), 4).unwrap();
        let init = SurrogateParams::init(Arch::for_dataset(&ds), 8);
        let cfg = TrainConfig {
            epochs_max: 1,
            ..TrainConfig::default()
        };
        let batch: Vec<_> = ds
            .trajectories(Split::Train)
            .into_iter()
            .flat_map(|n| c.indices().iter().map(move |&k| (n, k)))
            .collect();
        let before = rollout_loss_grad(&init, &batch, 1, &ds).unwrap().0;
        let pilot = train_pilot(&init, &ds, &c, &cfg).unwrap();
        let after = rollout_loss_grad(&pilot, &batch, 1, &ds).unwrap().0;
        assert!(after < before, "{after} !< {before}");
        assert_eq!(pilot, train_pilot(&init, &ds, &c, &cfg).unwrap());
        assert!(train_pilot(&init, &ds, &c, &TrainConfig { epochs_max: 0, ..cfg }).is_err());
    }

    #[test]
    fn exact_pilot_has_vanishing_scores() {
        let ds = small_ds(true);
        let c = CandidateSet::build(ds.t_count(), 4).unwrap();
        let pilot = SurrogateParams::zeros(Arch::for_dataset(&ds));
        let cfg = ScoringConfig::default();
        let g = score_grad_norm(&pilot, &c, &ds, &cfg, 0).unwrap();
        let l = score_rollout_loss(&pilot, &c, &ds, &cfg, 0).unwrap();
        assert!(g.scores.iter().all(|&s| s < 1e-6));
        assert!(l.scores.iter().all(|&s| s < 1e-9));
    }

    #[test]
    fn csv_export_has_one_row_per_candidate() {
        let c = CandidateSet::build(8, 4).unwrap();
        let s = CandidateScores::new(
            vec![0.5, 1.5, 0.0],
            ScoreKind::GradNorm,
            PilotMeta {
                epochs: 5,
                horizon: 10,
                seed: 3,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,score,kind,H,E_p,seed");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("5,1.5e0,grad_norm,10,5,3"));
    }
}
