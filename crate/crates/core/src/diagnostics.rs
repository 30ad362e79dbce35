//! Evaluation metrics and selection diagnostics.
//!
//! Frames are `(cell, channel)` interleaved, matching
//! [`TrajectoryDataset::frame`]. All metrics are computed in the dataset's
//! normalized units.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::{Split, TrajectoryDataset};
use crate::error::{GitsError, Result};
use crate::scoring::{candidate_loss_grads, l2, CandidateScores, CandidateSet, ScoringConfig};
use crate::surrogate::SurrogateParams;

/// One trajectory's rollout: `frames[t][cell * channels + c]`.
pub type Frames = Vec<Vec<f64>>;

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_PROBE_LR: f64 = 1e-3;

/// Inclusive upper mode of the low and mid Fourier bands; everything above
/// `mid_max` up to Nyquist is the high band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandEdges {
    pub low_max: usize,
    pub mid_max: usize,
}

impl Default for BandEdges {
    fn default() -> Self {
        Self {
            low_max: 4,
            mid_max: 12,
        }
    }
}

impl BandEdges {
    pub fn validate(&self) -> Result<()> {
        if self.mid_max <= self.low_max {
            return Err(GitsError::Config(format!(
                "band edges must increase (low_max={}, mid_max={})",
                self.low_max, self.mid_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxMetrics {
    pub crmse: f64,
    pub brmse: f64,
    pub frmse_low: f64,
    pub frmse_mid: f64,
    pub frmse_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub nrmse: f64,
    pub crmse: f64,
    pub brmse: f64,
    pub frmse_low: f64,
    pub frmse_mid: f64,
    pub frmse_high: f64,
    /// Rollout length `T_r = T_c − L`.
    pub horizon: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub overlap: usize,
    pub entropy: f64,
    pub coverage_frac: f64,
    pub bins: usize,
}

/// Rolls trajectory `n` forward from its first `L` ground-truth frames for
/// `T_r = T_c − L` steps.
pub fn predict_trajectory(params: &SurrogateParams, ds: &TrajectoryDataset, n: usize) -> Result<Frames> {
    let l = params.arch().history_len;
    if ds.t_count() <= l {
        return Err(GitsError::Shape(format!(
            "T_c={} leaves no rollout after {l} history frames",
            ds.t_count()
        )));
    }
    let history: Vec<Vec<f64>> = (0..l).map(|t| ds.frame_f64(n, t)).collect();
    params.rollout(&history, ds.t_count() - l)
}

fn truth_frames(ds: &TrajectoryDataset, n: usize, l: usize) -> Frames {
    (l..ds.t_count()).map(|t| ds.frame_f64(n, t)).collect()
}

fn check_pairs(pred: &[Frames], truth: &[Frames]) -> Result<()> {
    if pred.is_empty() {
        return Err(GitsError::Metric("no trajectories to evaluate".into()));
    }
    if pred.len() != truth.len() {
        return Err(GitsError::Shape(format!(
            "{} predicted vs {} true trajectories",
            pred.len(),
            truth.len()
        )));
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() || p.iter().zip(t).any(|(a, b)| a.len() != b.len()) {
            return Err(GitsError::Shape("prediction and truth shapes differ".into()));
        }
    }
    Ok(())
}

/// `mean_n sqrt(Σ_t‖x̂_t − x_t‖² / Σ_t‖x_t‖²)`.
pub fn nrmse_from_rollouts(pred: &[Frames], truth: &[Frames]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let mut total = 0.0;
    for (n, (p, t)) in pred.iter().zip(truth).enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (pf, tf) in p.iter().zip(t) {
            for (a, b) in pf.iter().zip(tf) {
                num += (a - b) * (a - b);
                den += b * b;
            }
        }
        if den == 0.0 {
            return Err(GitsError::Metric(format!("trajectory {n} has all-zero ground truth")));
        }
        total += (num / den).sqrt();
    }
    Ok(total / pred.len() as f64)
}

fn rollouts(params: &SurrogateParams, ds: &TrajectoryDataset, split: Split) -> Result<(Vec<Frames>, Vec<Frames>)> {
    let ids = ds.trajectories(split);
    if ids.is_empty() {
        return Err(GitsError::Metric(format!("{split:?} split is empty")));
    }
    let l = params.arch().history_len;
    let pred = ids
        .par_iter()
        .map(|&n| predict_trajectory(params, ds, n))
        .collect::<Result<Vec<_>>>()?;
    let truth = ids.iter().map(|&n| truth_frames(ds, n, l)).collect();
    Ok((pred, truth))
}

/// Rollout nRMSE over every trajectory of `split`.
pub fn rollout_nrmse(params: &SurrogateParams, ds: &TrajectoryDataset, split: Split) -> Result<f64> {
    let (pred, truth) = rollouts(params, ds, split)?;
    nrmse_from_rollouts(&pred, &truth)
}

/// Full report on `split` (normally [`Split::Test`]).
pub fn evaluate_rollout(
    params: &SurrogateParams,
    ds: &TrajectoryDataset,
    split: Split,
    bands: BandEdges,
) -> Result<RolloutReport> {
    let (pred, truth) = rollouts(params, ds, split)?;
    let nrmse = nrmse_from_rollouts(&pred, &truth)?;
    let aux = auxiliary_metrics(&pred, &truth, ds.spatial_size(), ds.channels(), bands)?;
    Ok(RolloutReport {
        nrmse,
        crmse: aux.crmse,
        brmse: aux.brmse,
        frmse_low: aux.frmse_low,
        frmse_mid: aux.frmse_mid,
        frmse_high: aux.frmse_high,
        horizon: pred[0].len(),
        n_test: pred.len(),
    })
}

/// Full complex DFT `E_m = Σ_x e_x·exp(−2πi·m·x/N)` of one spatial signal.
pub fn error_spectrum(error: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = error.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// cRMSE, bRMSE and band-wise fRMSE of `pred − truth`.
///
/// * cRMSE: RMS over (trajectory, step, channel) of the spatial-mean error.
/// * bRMSE: RMS of the error at the first and last cell.
/// * fRMSE: per mode `m ∈ 0..=N/2`, `r_m = sqrt(mean |E_m|²) / N`; each band
///   reports the mean of `r_m` over its modes (0 for an empty band).
pub fn auxiliary_metrics(
    pred: &[Frames],
    truth: &[Frames],
    cells: usize,
    channels: usize,
    bands: BandEdges,
) -> Result<AuxMetrics> {
    check_pairs(pred, truth)?;
    bands.validate()?;
    if cells == 0 || channels == 0 {
        return Err(GitsError::Shape("empty spatial grid".into()));
    }
    if pred.iter().flatten().any(|f| f.len() != cells * channels) {
        return Err(GitsError::Shape(format!("frames must hold {cells}x{channels} values")));
    }

    let n_modes = cells / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(cells);
    let mut spec_sq = vec![0.0; n_modes];
    let mut c_sq = 0.0;
    let mut b_sq = 0.0;
    let mut signals = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); cells];
    for (p, t) in pred.iter().zip(truth) {
        for (pf, tf) in p.iter().zip(t) {
            for c in 0..channels {
                for x in 0..cells {
                    let i = x * channels + c;
                    buf[x] = Complex::new(pf[i] - tf[i], 0.0);
                }
                let mean = buf.iter().map(|z| z.re).sum::<f64>() / cells as f64;
                c_sq += mean * mean;
                let first = buf[0].re;
                let last = buf[cells - 1].re;
                b_sq += first * first + last * last;
                fft.process(&mut buf);
                for (acc, z) in spec_sq.iter_mut().zip(&buf) {
                    *acc += z.norm_sqr();
                }
                signals += 1;
            }
        }
    }

    let s = signals as f64;
    let per_mode: Vec<f64> = spec_sq.iter().map(|v| (v / s).sqrt() / cells as f64).collect();
    let band = |lo: usize, hi: usize| -> f64 {
        let hi = hi.min(n_modes - 1);
        if lo > hi {
            return 0.0;
        }
        per_mode[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    };
    Ok(AuxMetrics {
        crmse: (c_sq / s).sqrt(),
        brmse: (b_sq / (2.0 * s)).sqrt(),
        frmse_low: band(0, bands.low_max),
        frmse_mid: band(bands.low_max + 1, bands.mid_max),
        frmse_high: band(bands.mid_max + 1, n_modes - 1),
    })
}

/// Overlap of `s1` with `s2`, and bin entropy/coverage of `s1` over
/// `bins` equal-width bins spanning `[min C, max C]`.
pub fn subset_geometry(
    s1: &[usize],
    s2: &[usize],
    candidates: &CandidateSet,
    bins: usize,
) -> Result<GeometryReport> {
    if bins == 0 {
        return Err(GitsError::Metric("need at least one bin".into()));
    }
    for &k in s1.iter().chain(s2) {
        if !candidates.contains(k) {
            return Err(GitsError::NotCandidate(k));
        }
    }
    let mut a = s1.to_vec();
    a.sort_unstable();
    a.dedup();
    let mut b = s2.to_vec();
    b.sort_unstable();
    b.dedup();
    let overlap = a.iter().filter(|k| b.binary_search(k).is_ok()).count();

    let lo = candidates.first() as f64;
    let span = (candidates.last() - candidates.first()) as f64;
    let mut counts = vec![0usize; bins];
    for &k in &a {
        let bin = if span == 0.0 {
            0
        } else {
            (((k as f64 - lo) / span) * bins as f64).floor() as usize
        };
        counts[bin.min(bins - 1)] += 1;
    }
    let total = a.len() as f64;
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    let entropy = if a.is_empty() {
        0.0
    } else if bins == 1 {
        1.0
    } else if occupied == 1 {
        0.0
    } else {
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum();
        (h / (bins as f64).ln()).clamp(0.0, 1.0)
    };
    Ok(GeometryReport {
        overlap,
        entropy,
        coverage_frac: occupied as f64 / bins as f64,
        bins,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GitsError::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(GitsError::Metric("spearman needs at least two points".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(GitsError::Metric("non-finite value in rank correlation".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(GitsError::Metric("rank correlation of a constant vector".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Validation improvement from one normalized gradient step per candidate:
/// `nrmse(θ_p) − nrmse(θ_p − lr·g_k/‖g_k‖)`. Zero gradients give 0.
pub fn probe_utilities(
    pilot: &SurrogateParams,
    candidates: &CandidateSet,
    ds: &TrajectoryDataset,
    scoring: &ScoringConfig,
    probe_lr: f64,
) -> Result<Vec<f64>> {
    if !(probe_lr > 0.0 && probe_lr.is_finite()) {
        return Err(GitsError::Config(format!("probe_lr must be positive, got {probe_lr}")));
    }
    let base = rollout_nrmse(pilot, ds, Split::Val)?;
    let grads = candidate_loss_grads(pilot, candidates, ds, scoring)?;
    grads
        .par_iter()
        .map(|(_, g)| {
            let norm = l2(g);
            if norm == 0.0 {
                return Ok(0.0);
            }
            let theta: Vec<f64> = pilot
                .theta()
                .iter()
                .zip(g)
                .map(|(t, gi)| t - probe_lr * gi / norm)
                .collect();
            let probed = pilot.with_theta(theta)?;
            Ok(base - rollout_nrmse(&probed, ds, Split::Val)?)
        })
        .collect()
}

/// Spearman correlation between candidate scores and probe utilities.
pub fn score_utility_alignment(
    pilot: &SurrogateParams,
    scores: &CandidateScores,
    candidates: &CandidateSet,
    ds: &TrajectoryDataset,
    scoring: &ScoringConfig,
    probe_lr: f64,
) -> Result<f64> {
    if candidates.len() < 3 {
        return Err(GitsError::Metric(format!(
            "alignment needs at least 3 candidates, got {}",
            candidates.len()
        )));
    }
    let utilities = probe_utilities(pilot, candidates, ds, scoring, probe_lr)?;
    spearman(&scores.scores, &utilities)
}
