use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Split, TrajectoryDataset};
use crate::diagnostics::rollout_nrmse;
use crate::error::{GitsError, Result};

use super::{rollout_loss_grad, SurrogateParams};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs_max: usize,
    pub batch_size: usize,
    /// Maximum global L2 norm of each mini-batch gradient.
    pub grad_clip: f64,
    pub min_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// When false, runs exactly `epochs_max` epochs and returns the final
    /// parameters without validation rollouts.
    pub early_stopping: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs_max: 100,
            batch_size: 64,
            grad_clip: 1.0,
            min_epochs: 10,
            patience: 5,
            seed: 0,
            early_stopping: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GitsError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(GitsError::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(GitsError::Config("grad_clip must be positive".into()));
        }
        if self.patience == 0 {
            return Err(GitsError::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean one-step loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Validation rollout nRMSE, present on epochs that were evaluated.
    pub val_nrmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: SurrogateParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (`None` when no epoch ran or
    /// early stopping is disabled).
    pub best_epoch: Option<usize>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Trains on the one-step windows `D(starts)` of the training split.
///
/// Each epoch shuffles all `(trajectory, start)` pairs with the run's RNG,
/// takes clipped Adam steps on mini-batches, and (with early stopping)
/// evaluates the validation rollout nRMSE from `min_epochs` on. The
/// parameters with the lowest evaluated validation error are returned.
pub fn train(
    init: &SurrogateParams,
    starts: &[usize],
    ds: &TrajectoryDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if starts.is_empty() {
        return Err(GitsError::Config("training needs at least one start index".into()));
    }
    let l = init.arch().history_len;
    let hi = ds.t_count().saturating_sub(2);
    if let Some(&k) = starts.iter().find(|&&k| k < l || k > hi) {
        return Err(GitsError::InvalidStart { k, lo: l, hi });
    }
    let train_traj = ds.trajectories(Split::Train);
    if train_traj.is_empty() {
        return Err(GitsError::Config("dataset has no training trajectories".into()));
    }
    if cfg.early_stopping && cfg.epochs_max > 0 && ds.trajectories(Split::Val).is_empty() {
        return Err(GitsError::Config(
            "early stopping needs validation trajectories".into(),
        ));
    }

    let mut samples: Vec<(usize, usize)> = train_traj
        .iter()
        .flat_map(|&n| starts.iter().map(move |&k| (n, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init.clone();
    let mut adam = Adam::new(params.param_count());
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, SurrogateParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs_max {
        samples.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            let (loss, mut grad) = rollout_loss_grad(&params, batch, 1, ds)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(GitsError::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            clip_norm(&mut grad, cfg.grad_clip);
            adam.step(params.theta_mut(), &grad, cfg.lr);
        }
        if params.theta().iter().any(|v| !v.is_finite()) {
            return Err(GitsError::Divergence { epoch });
        }
        let train_loss = total / samples.len() as f64;

        let evaluate =
            cfg.early_stopping && (epoch >= cfg.min_epochs || epoch == cfg.epochs_max);
        let val_nrmse = if evaluate {
            Some(rollout_nrmse(&params, ds, Split::Val)?)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_nrmse,
        });

        if let Some(val) = val_nrmse {
            let improved = match &best {
                Some((b, _, _)) => val < *b,
                None => val.is_finite(),
            };
            if improved {
                best = Some((val, epoch, params.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            if epoch >= cfg.min_epochs && stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(match best {
        Some((_, epoch, p)) => TrainOutcome {
            params: p,
            history,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            params,
            history,
            best_epoch: None,
        },
    })
}
