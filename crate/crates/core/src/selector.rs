//! Budgeted start-index selection.
//!
//! [`greedy_select`] maximizes the joint objective
//! `F(S) = Σ_{k∈S} s_k + λ_cov·F_cov(S) + c_win·F_win(S)` with the classic
//! greedy rule, which keeps the `(1 − 1/e)` guarantee because every term is
//! monotone submodular. The baselines share the same [`SelectionResult`]
//! output and are dispatched through [`run_sampler`].

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageConfig, CoverageSystem};
use crate::data::TrajectoryDataset;
use crate::error::{GitsError, Result};
use crate::scoring::{candidate_loss_grads, CandidateScores, CandidateSet, ScoringConfig};
use crate::surrogate::SurrogateParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Gits,
    Uniform,
    LossOnly,
    CoverageOnly,
    GradOnly,
    LossDiv,
    GradMatch,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 7] = [
        SamplerKind::Gits,
        SamplerKind::Uniform,
        SamplerKind::LossOnly,
        SamplerKind::CoverageOnly,
        SamplerKind::GradOnly,
        SamplerKind::LossDiv,
        SamplerKind::GradMatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Gits => "gits",
            SamplerKind::Uniform => "uniform",
            SamplerKind::LossOnly => "loss_only",
            SamplerKind::CoverageOnly => "coverage_only",
            SamplerKind::GradOnly => "grad_only",
            SamplerKind::LossDiv => "loss_div",
            SamplerKind::GradMatch => "grad_match",
        }
    }

    /// Whether the sampler consumes pilot scores or gradients.
    pub fn needs_pilot(self) -> bool {
        !matches!(self, SamplerKind::Uniform | SamplerKind::CoverageOnly)
    }

    /// Samplers whose greedy gains must be non-increasing.
    pub fn is_submodular(self) -> bool {
        matches!(
            self,
            SamplerKind::Gits
                | SamplerKind::CoverageOnly
                | SamplerKind::LossDiv
                | SamplerKind::GradOnly
                | SamplerKind::LossOnly
        )
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = GitsError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| GitsError::Config(format!("unknown sampler '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda_cov: f64,
    pub c_win: f64,
    pub coverage: CoverageConfig,
    /// Divide scores by their maximum before use. Off by default.
    #[serde(default)]
    pub normalize_scores: bool,
}

pub const DEFAULT_LAMBDA_COV: f64 = 1.0;
pub const DEFAULT_C_WIN: f64 = 0.5;

impl ObjectiveConfig {
    /// Weights with kernel parameters derived from `(T_c, K)`.
    pub fn derived(t_count: usize, budget: usize, lambda_cov: f64, c_win: f64) -> Result<Self> {
        Ok(Self {
            lambda_cov,
            c_win,
            coverage: CoverageConfig::derive(t_count, budget)?,
            normalize_scores: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cov >= 0.0 && self.c_win >= 0.0) {
            return Err(GitsError::Config(format!(
                "objective weights must be non-negative (lambda_cov={}, c_win={})",
                self.lambda_cov, self.c_win
            )));
        }
        self.coverage.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub sampler: SamplerKind,
    pub budget: usize,
    /// Chosen start indices in selection order.
    pub selected: Vec<usize>,
    /// Per-step marginal gain (greedy samplers), score (top-K samplers) or
    /// residual reduction (gradient matching); empty for uniform.
    pub gains: Vec<f64>,
    /// `F(S)` under the echoed objective, for objective-driven samplers.
    pub objective: Option<f64>,
    /// Final gradient-matching residual `‖ḡ − mean_S g‖₂`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ObjectiveConfig>,
    pub wall_time_s: f64,
}

impl SelectionResult {
    pub fn sorted(&self) -> Vec<usize> {
        let mut s = self.selected.clone();
        s.sort_unstable();
        s
    }
}

fn check_budget(candidates: &CandidateSet, budget: usize) -> Result<()> {
    if budget == 0 || budget > candidates.len() {
        return Err(GitsError::Budget {
            budget,
            available: candidates.len(),
        });
    }
    Ok(())
}

fn effective_scores(scores: &[f64], obj: &ObjectiveConfig) -> Vec<f64> {
    if obj.normalize_scores {
        let max = scores.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            return scores.iter().map(|s| s / max).collect();
        }
    }
    scores.to_vec()
}

fn check_scores(scores: &[f64], candidates: &CandidateSet) -> Result<()> {
    if scores.len() != candidates.len() {
        return Err(GitsError::Shape(format!(
            "{} scores for {} candidates",
            scores.len(),
            candidates.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(GitsError::Validation("non-finite candidate score".into()));
    }
    Ok(())
}

/// From-scratch `F(S)`.
pub fn objective_value(
    scores: &[f64],
    system: &CoverageSystem,
    obj: &ObjectiveConfig,
    selection: &[usize],
) -> Result<f64> {
    check_scores(scores, system.candidates())?;
    let s = effective_scores(scores, obj);
    let (cov, win) = system.coverage_values(selection)?;
    let modular: f64 = selection
        .iter()
        .map(|&k| s[system.candidates().position(k).expect("checked by coverage_values")])
        .sum();
    Ok(modular + obj.lambda_cov * cov + obj.c_win * win)
}

/// Greedy maximization of the joint objective under `|S| = K`.
///
/// Each step evaluates `Δ(k|S) = s_k + λ_cov·Σ_i(max(m_i,S_ik)−m_i) +
/// c_win·Σ_m(max(u_m,R_mk)−u_m)` for every unselected `k` and takes the
/// argmax, lowest index first on exact ties.
pub fn greedy_select(
    scores: &[f64],
    candidates: &CandidateSet,
    obj: &ObjectiveConfig,
    budget: usize,
) -> Result<SelectionResult> {
    greedy_as(SamplerKind::Gits, scores, candidates, obj, budget)
}

fn greedy_as(
    sampler: SamplerKind,
    scores: &[f64],
    candidates: &CandidateSet,
    obj: &ObjectiveConfig,
    budget: usize,
) -> Result<SelectionResult> {
    let start = Instant::now();
    obj.validate()?;
    check_budget(candidates, budget)?;
    check_scores(scores, candidates)?;
    let s = effective_scores(scores, obj);
    let system = CoverageSystem::new(candidates, obj.coverage)?;
    let mut state = system.empty_state();
    let mut taken = vec![false; candidates.len()];
    let mut selected = Vec::with_capacity(budget);
    let mut gains = Vec::with_capacity(budget);

    for _ in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &k) in candidates.indices().iter().enumerate() {
            if taken[pos] {
                continue;
            }
            let (g_cov, g_win) = system.gains(&state, k);
            let gain = s[pos] + obj.lambda_cov * g_cov + obj.c_win * g_win;
            if best.is_none_or(|(_, b)| gain > b) {
                best = Some((pos, gain));
            }
        }
        let (pos, gain) = best.expect("budget <= |C| leaves a candidate");
        let k = candidates.indices()[pos];
        system.update(&mut state, k)?;
        taken[pos] = true;
        selected.push(k);
        gains.push(gain);
    }

    let objective = objective_value(scores, &system, obj, &selected)?;
    Ok(SelectionResult {
        sampler,
        budget,
        selected,
        gains,
        objective: Some(objective),
        residual: None,
        config: Some(*obj),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Evenly spaced positions `round(j·(|C|−1)/(K−1))`, or the midpoint when
/// `K = 1`. The seed is accepted for interface uniformity and ignored.
pub fn sample_uniform(candidates: &CandidateSet, budget: usize, _seed: u64) -> Result<SelectionResult> {
    let start = Instant::now();
    check_budget(candidates, budget)?;
    let last = (candidates.len() - 1) as f64;
    let positions: Vec<usize> = if budget == 1 {
        vec![(last / 2.0).round() as usize]
    } else {
        (0..budget)
            .map(|j| (j as f64 * last / (budget - 1) as f64).round() as usize)
            .collect()
    };
    Ok(SelectionResult {
        sampler: SamplerKind::Uniform,
        budget,
        selected: positions.iter().map(|&p| candidates.indices()[p]).collect(),
        gains: Vec::new(),
        objective: None,
        residual: None,
        config: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn top_k(sampler: SamplerKind, scores: &CandidateScores, candidates: &CandidateSet, budget: usize) -> Result<SelectionResult> {
    let start = Instant::now();
    check_budget(candidates, budget)?;
    check_scores(&scores.scores, candidates)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // Stable sort keeps the lowest index first among equal scores.
    order.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]));
    order.truncate(budget);
    let gains: Vec<f64> = order.iter().map(|&p| scores.scores[p]).collect();
    Ok(SelectionResult {
        sampler,
        budget,
        selected: order.iter().map(|&p| candidates.indices()[p]).collect(),
        objective: Some(gains.iter().sum()),
        gains,
        residual: None,
        config: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Top-K by pilot rollout loss.
pub fn sample_loss_only(loss_scores: &CandidateScores, candidates: &CandidateSet, budget: usize) -> Result<SelectionResult> {
    top_k(SamplerKind::LossOnly, loss_scores, candidates, budget)
}

/// Top-K by pilot gradient norm.
pub fn sample_grad_only(grad_scores: &CandidateScores, candidates: &CandidateSet, budget: usize) -> Result<SelectionResult> {
    top_k(SamplerKind::GradOnly, grad_scores, candidates, budget)
}

/// Greedy on the coverage terms alone.
pub fn sample_coverage_only(candidates: &CandidateSet, obj: &ObjectiveConfig, budget: usize) -> Result<SelectionResult> {
    let zeros = vec![0.0; candidates.len()];
    greedy_as(SamplerKind::CoverageOnly, &zeros, candidates, obj, budget)
}

/// Greedy on rollout-loss scores plus both coverage terms.
pub fn sample_loss_div(
    loss_scores: &CandidateScores,
    candidates: &CandidateSet,
    obj: &ObjectiveConfig,
    budget: usize,
) -> Result<SelectionResult> {
    greedy_as(SamplerKind::LossDiv, &loss_scores.scores, candidates, obj, budget)
}

/// The full method: greedy on gradient-norm scores plus both coverage terms.
pub fn sample_gits(
    grad_scores: &CandidateScores,
    candidates: &CandidateSet,
    obj: &ObjectiveConfig,
    budget: usize,
) -> Result<SelectionResult> {
    greedy_as(SamplerKind::Gits, &grad_scores.scores, candidates, obj, budget)
}

fn residual_norm(target: &[f64], sum: &[f64], extra: Option<&[f64]>, count: usize) -> f64 {
    let inv = 1.0 / count as f64;
    target
        .iter()
        .enumerate()
        .map(|(d, &t)| {
            let s = sum[d] + extra.map_or(0.0, |e| e[d]);
            let r = t - s * inv;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Greedy gradient matching on precomputed per-candidate gradients.
///
/// With `ḡ` the mean of all candidate gradients, each step adds the
/// candidate minimizing `‖ḡ − mean_{j∈S∪{k}} g_j‖₂` (lowest index on ties).
pub fn grad_match_select(
    gradients: &[Vec<f64>],
    candidates: &CandidateSet,
    budget: usize,
) -> Result<SelectionResult> {
    let start = Instant::now();
    check_budget(candidates, budget)?;
    if gradients.len() != candidates.len() {
        return Err(GitsError::Shape(format!(
            "{} gradients for {} candidates",
            gradients.len(),
            candidates.len()
        )));
    }
    let dim = gradients[0].len();
    if gradients.iter().any(|g| g.len() != dim) {
        return Err(GitsError::Shape("gradients differ in dimension".into()));
    }
    let n = gradients.len() as f64;
    let mut target = vec![0.0; dim];
    for g in gradients {
        for (t, v) in target.iter_mut().zip(g) {
            *t += v / n;
        }
    }

    let mut sum = vec![0.0; dim];
    let mut taken = vec![false; gradients.len()];
    let mut selected = Vec::with_capacity(budget);
    let mut gains = Vec::with_capacity(budget);
    let mut current = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    for step in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for (pos, g) in gradients.iter().enumerate() {
            if taken[pos] {
                continue;
            }
            let r = residual_norm(&target, &sum, Some(g), step + 1);
            if best.is_none_or(|(_, b)| r < b) {
                best = Some((pos, r));
            }
        }
        let (pos, r) = best.expect("budget <= |C| leaves a candidate");
        taken[pos] = true;
        for (s, v) in sum.iter_mut().zip(&gradients[pos]) {
            *s += v;
        }
        selected.push(candidates.indices()[pos]);
        gains.push(current - r);
        current = r;
    }
    Ok(SelectionResult {
        sampler: SamplerKind::GradMatch,
        budget,
        selected,
        gains,
        objective: None,
        residual: Some(current),
        config: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Gradient matching with gradients computed at the pilot.
pub fn sample_grad_match(
    pilot: &SurrogateParams,
    candidates: &CandidateSet,
    ds: &TrajectoryDataset,
    scoring: &ScoringConfig,
    budget: usize,
) -> Result<SelectionResult> {
    check_budget(candidates, budget)?;
    let grads: Vec<Vec<f64>> = candidate_loss_grads(pilot, candidates, ds, scoring)?
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    grad_match_select(&grads, candidates, budget)
}

/// Everything a sampler may consume. Pilot-derived inputs are optional;
/// requesting a sampler without its inputs is a configuration error.
#[derive(Debug, Clone, Copy)]
pub struct SamplerInputs<'a> {
    pub candidates: &'a CandidateSet,
    pub objective: &'a ObjectiveConfig,
    pub grad_scores: Option<&'a CandidateScores>,
    pub loss_scores: Option<&'a CandidateScores>,
    pub gradients: Option<&'a [Vec<f64>]>,
    pub seed: u64,
}

pub fn run_sampler(kind: SamplerKind, inputs: &SamplerInputs<'_>, budget: usize) -> Result<SelectionResult> {
    let missing = |what: &str| GitsError::Config(format!("sampler {kind} needs {what}"));
    let c = inputs.candidates;
    match kind {
        SamplerKind::Uniform => sample_uniform(c, budget, inputs.seed),
        SamplerKind::CoverageOnly => sample_coverage_only(c, inputs.objective, budget),
        SamplerKind::Gits => sample_gits(
            inputs.grad_scores.ok_or_else(|| missing("gradient-norm scores"))?,
            c,
            inputs.objective,
            budget,
        ),
        SamplerKind::GradOnly => sample_grad_only(
            inputs.grad_scores.ok_or_else(|| missing("gradient-norm scores"))?,
            c,
            budget,
        ),
        SamplerKind::LossOnly => sample_loss_only(
            inputs.loss_scores.ok_or_else(|| missing("rollout-loss scores"))?,
            c,
            budget,
        ),
        SamplerKind::LossDiv => sample_loss_div(
            inputs.loss_scores.ok_or_else(|| missing("rollout-loss scores"))?,
            c,
            inputs.objective,
            budget,
        ),
        SamplerKind::GradMatch => grad_match_select(
            inputs.gradients.ok_or_else(|| missing("candidate gradients"))?,
            c,
            budget,
        ),
    }
}
