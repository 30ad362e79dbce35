//! Facility-location coverage of the candidate time axis.
//!
//! Two terms are maintained:
//!
//! * global: `F_cov(S) = Σ_{i∈C} max_{j∈S} exp(−|i−j|/τ)`
//! * windowed: `F_win(S) = Σ_m max_{j∈S} exp(−d(m, j)/τ_w)` where `d` is the
//!   distance from `j` to window `[a_m, b_m]`
//!
//! [`CoverageState`] keeps the running maxima `m_i` and `u_m` so that a
//! candidate's marginal coverage gain costs `O(|C| + M)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{GitsError, Result};
use crate::scoring::CandidateSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    pub tau: f64,
    pub window_size: usize,
    pub window_stride: usize,
    pub tau_w: f64,
    /// `(T_c, K)` when the parameters were derived from the budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<(usize, usize)>,
}

impl CoverageConfig {
    /// Budget-implied spacing rules, each lifted to at least 1:
    /// `τ = ⌊T_c/K⌋`, `W = 2⌊T_c/K⌋`, `S_w = ⌊W/2⌋`, `τ_w = ⌊W/4⌋`.
    pub fn derive(t_count: usize, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(GitsError::Budget {
                budget,
                available: t_count,
            });
        }
        let spacing = t_count / budget;
        let window = (2 * spacing).max(1);
        Ok(Self {
            tau: spacing.max(1) as f64,
            window_size: window,
            window_stride: (window / 2).max(1),
            tau_w: (window / 4).max(1) as f64,
            derived_from: Some((t_count, budget)),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau >= 1.0
            && self.tau_w >= 1.0
            && self.window_size >= 1
            && (1..=self.window_size).contains(&self.window_stride);
        if ok {
            Ok(())
        } else {
            Err(GitsError::Config(format!("invalid coverage parameters {self:?}")))
        }
    }
}

/// `exp(−|i−j|/τ)`.
pub fn kernel_global(i: usize, j: usize, tau: f64) -> f64 {
    (-(i.abs_diff(j) as f64) / tau).exp()
}

/// Signature of a global similarity kernel, used to swap kernels in oracle
/// and mutation tests.
pub type GlobalKernel = fn(usize, usize, f64) -> f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    /// Distance from `j` to `[start, end]`; zero inside.
    pub fn distance(&self, j: usize) -> usize {
        if j < self.start {
            self.start - j
        } else {
            j.saturating_sub(self.end)
        }
    }

    pub fn contains(&self, j: usize) -> bool {
        (self.start..=self.end).contains(&j)
    }
}

/// `exp(−d(m, j)/τ_w)`.
pub fn kernel_window(window: &Window, j: usize, tau_w: f64) -> f64 {
    (-(window.distance(j) as f64) / tau_w).exp()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowList {
    pub intervals: Vec<Window>,
}

impl WindowList {
    /// Windows `[a, a+W−1]` for `a = min(C), min(C)+S_w, …`, clipped to
    /// `max(C)`. Generation stops at the first window reaching `max(C)`, so
    /// the union is exactly the candidate range.
    pub fn build(candidates: &CandidateSet, cfg: &CoverageConfig) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = (candidates.first(), candidates.last());
        let mut intervals = Vec::new();
        let mut a = lo;
        loop {
            let b = (a + cfg.window_size - 1).min(hi);
            intervals.push(Window { start: a, end: b });
            if b == hi {
                break;
            }
            a += cfg.window_stride;
        }
        Ok(Self { intervals })
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m", "a", "b"])?;
        for (m, iv) in self.intervals.iter().enumerate() {
            w.write_record([m.to_string(), iv.start.to_string(), iv.end.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Running maxima of a partial selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    /// `m[i] = max_{j∈S} S_ij`, aligned with the candidate indices.
    pub m: Vec<f64>,
    /// `u[m] = max_{j∈S} R_mj`, aligned with the windows.
    pub u: Vec<f64>,
    selected: Vec<bool>,
    selected_count: usize,
}

impl CoverageState {
    pub fn selected_count(&self) -> usize {
        self.selected_count
    }

    pub fn global_total(&self) -> f64 {
        self.m.iter().sum()
    }

    pub fn window_total(&self) -> f64 {
        self.u.iter().sum()
    }
}

/// Candidate axis, windows and kernel parameters of one coverage problem.
#[derive(Debug, Clone)]
pub struct CoverageSystem {
    candidates: CandidateSet,
    windows: WindowList,
    cfg: CoverageConfig,
}

impl CoverageSystem {
    pub fn new(candidates: &CandidateSet, cfg: CoverageConfig) -> Result<Self> {
        let windows = WindowList::build(candidates, &cfg)?;
        Ok(Self {
            candidates: candidates.clone(),
            windows,
            cfg,
        })
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn windows(&self) -> &WindowList {
        &self.windows
    }

    pub fn config(&self) -> &CoverageConfig {
        &self.cfg
    }

    fn check(&self, k: usize) -> Result<usize> {
        self.candidates.position(k).ok_or(GitsError::NotCandidate(k))
    }

    /// From-scratch `(F_cov, F_win)`; the empty selection scores `(0, 0)`.
    pub fn coverage_values(&self, selection: &[usize]) -> Result<(f64, f64)> {
        self.coverage_values_with(selection, kernel_global)
    }

    /// [`coverage_values`](Self::coverage_values) with a substitute global
    /// kernel.
    pub fn coverage_values_with(&self, selection: &[usize], kernel: GlobalKernel) -> Result<(f64, f64)> {
        for &k in selection {
            self.check(k)?;
        }
        if selection.is_empty() {
            return Ok((0.0, 0.0));
        }
        let tau = self.cfg.tau;
        let f_cov = self
            .candidates
            .indices()
            .iter()
            .map(|&i| {
                selection
                    .iter()
                    .map(|&j| kernel(i, j, tau))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        let f_win = self
            .windows
            .intervals
            .iter()
            .map(|w| {
                selection
                    .iter()
                    .map(|&j| kernel_window(w, j, self.cfg.tau_w))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        Ok((f_cov, f_win))
    }

    pub fn empty_state(&self) -> CoverageState {
        CoverageState {
            m: vec![0.0; self.candidates.len()],
            u: vec![0.0; self.windows.len()],
            selected: vec![false; self.candidates.len()],
            selected_count: 0,
        }
    }

    /// Marginal coverage gains `(Σ_i max(m_i,S_ik)−m_i, Σ_m max(u_m,R_mk)−u_m)`
    /// of adding `k` to the state's selection.
    pub fn gains(&self, state: &CoverageState, k: usize) -> (f64, f64) {
        let tau = self.cfg.tau;
        let g_cov = self
            .candidates
            .indices()
            .iter()
            .zip(&state.m)
            .map(|(&i, &mi)| (kernel_global(i, k, tau) - mi).max(0.0))
            .sum();
        let g_win = self
            .windows
            .intervals
            .iter()
            .zip(&state.u)
            .map(|(w, &um)| (kernel_window(w, k, self.cfg.tau_w) - um).max(0.0))
            .sum();
        (g_cov, g_win)
    }

    /// Folds `k` into the state: `m_i ← max(m_i, S_ik)`, `u_m ← max(u_m, R_mk)`.
    pub fn update(&self, state: &mut CoverageState, k: usize) -> Result<()> {
        let pos = self.check(k)?;
        if state.selected[pos] {
            return Err(GitsError::DuplicateIndex(k));
        }
        let tau = self.cfg.tau;
        for (&i, mi) in self.candidates.indices().iter().zip(state.m.iter_mut()) {
            *mi = mi.max(kernel_global(i, k, tau));
        }
        for (w, um) in self.windows.intervals.iter().zip(state.u.iter_mut()) {
            *um = um.max(kernel_window(w, k, self.cfg.tau_w));
        }
        state.selected[pos] = true;
        state.selected_count += 1;
        Ok(())
    }

    /// Value-returning form of [`update`](Self::update).
    pub fn state_update(&self, state: &CoverageState, k: usize) -> Result<CoverageState> {
        let mut next = state.clone();
        self.update(&mut next, k)?;
        Ok(next)
    }
}
