//! Synthetic PDE trajectory datasets.
//!
//! Trajectories are integrated with explicit finite-difference schemes on a
//! uniform 1D grid over the unit interval, stored every `snapshot_stride`
//! solver steps, and normalized per channel with statistics from the
//! training split. A dataset is persisted as a JSON manifest beside a flat
//! little-endian `f32` payload in `(trajectory, time, cell, channel)` order.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GitsError, Result};
use crate::surrogate::DEFAULT_HISTORY_LEN;

pub const FORMAT_VERSION: u32 = 1;

/// Smallest number of trajectories accepted by [`generate_dataset`].
pub const MIN_TRAJECTORIES: usize = 10;

const TRAIN_FRACTION: f64 = 0.8;
const VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Diffusion1d,
    Burgers1d,
    AdvectionDiffusion1d,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Diffusion1d => "diffusion1d",
            Family::Burgers1d => "burgers1d",
            Family::AdvectionDiffusion1d => "advection_diffusion1d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Closed interval a physical coefficient is drawn from, per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefRange {
    pub lo: f64,
    pub hi: f64,
}

impl CoefRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub family: Family,
    pub spatial_size: usize,
    pub t_count: usize,
    pub dt: f64,
    pub snapshot_stride: usize,
    /// Diffusion coefficient (diffusion1d, advection_diffusion1d).
    pub diffusivity: CoefRange,
    /// Kinematic viscosity (burgers1d).
    pub viscosity: CoefRange,
    /// Transport speed (advection_diffusion1d).
    pub advection_speed: CoefRange,
    pub boundary: Boundary,
    pub seed: u64,
    /// Number of random Fourier modes in each initial condition.
    #[serde(default = "default_modes")]
    pub ic_modes: usize,
    #[serde(default = "default_max_wavenumber")]
    pub ic_max_wavenumber: usize,
}

fn default_modes() -> usize {
    3
}

fn default_max_wavenumber() -> usize {
    4
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_family(Family::Diffusion1d)
    }
}

impl SolverConfig {
    /// Desk-scale defaults: 64 cells, 101 snapshots, 2000 solver steps.
    pub fn for_family(family: Family) -> Self {
        let base = Self {
            family,
            spatial_size: 64,
            t_count: 101,
            dt: 1e-3,
            snapshot_stride: 20,
            diffusivity: CoefRange::new(0.0005, 0.002),
            viscosity: CoefRange::new(0.002, 0.01),
            advection_speed: CoefRange::new(-1.0, 1.0),
            boundary: Boundary::Periodic,
            seed: 0,
            ic_modes: default_modes(),
            ic_max_wavenumber: default_max_wavenumber(),
        };
        match family {
            Family::Diffusion1d | Family::Burgers1d | Family::AdvectionDiffusion1d => base,
        }
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.spatial_size as f64
    }

    /// Upper bound on |u| for any initial condition: every mode amplitude
    /// lies in [-1, 1].
    fn amplitude_bound(&self) -> f64 {
        self.ic_modes as f64
    }

    /// Checks geometry and the explicit-scheme stability bound of the family,
    /// evaluated at the worst case of the coefficient ranges.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GitsError::Config(m));
        if self.spatial_size < 4 {
            return err(format!("spatial_size must be >= 4, got {}", self.spatial_size));
        }
        if self.t_count < DEFAULT_HISTORY_LEN + 2 {
            return err(format!(
                "t_count must be >= {} so the candidate set is nonempty, got {}",
                DEFAULT_HISTORY_LEN + 2,
                self.t_count
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return err(format!("dt must be positive, got {}", self.dt));
        }
        if self.snapshot_stride == 0 {
            return err("snapshot_stride must be >= 1".into());
        }
        if self.ic_modes == 0 || self.ic_max_wavenumber == 0 {
            return err("initial conditions need at least one mode and wavenumber".into());
        }
        for (name, r) in [
            ("diffusivity", self.diffusivity),
            ("viscosity", self.viscosity),
            ("advection_speed", self.advection_speed),
        ] {
            if !(r.lo.is_finite() && r.hi.is_finite()) || r.lo > r.hi {
                return err(format!("{name} range [{}, {}] is invalid", r.lo, r.hi));
            }
        }
        if self.diffusivity.lo < 0.0 || self.viscosity.lo < 0.0 {
            return err("diffusivity and viscosity must be non-negative".into());
        }

        let dx = self.dx();
        let (number, limit) = match self.family {
            Family::Diffusion1d => (self.diffusivity.max_abs() * self.dt / (dx * dx), 0.5),
            Family::Burgers1d => (
                self.amplitude_bound() * self.dt / dx
                    + 2.0 * self.viscosity.max_abs() * self.dt / (dx * dx),
                1.0,
            ),
            Family::AdvectionDiffusion1d => (
                self.advection_speed.max_abs() * self.dt / dx
                    + 2.0 * self.diffusivity.max_abs() * self.dt / (dx * dx),
                1.0,
            ),
        };
        if number > limit {
            return err(format!(
                "unstable dt={} for {}: stability number {number:.4} exceeds {limit}",
                self.dt,
                self.family.name()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Immutable collection of normalized trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    data: Vec<f32>,
    n_traj: usize,
    t_count: usize,
    spatial_size: usize,
    channels: usize,
    split: Vec<Split>,
    normalization: Vec<ChannelStats>,
    boundary: Boundary,
    family: Option<Family>,
}

impl TrajectoryDataset {
    /// Assembles a dataset from already-normalized samples.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        data: Vec<f32>,
        n_traj: usize,
        t_count: usize,
        spatial_size: usize,
        channels: usize,
        split: Vec<Split>,
        normalization: Vec<ChannelStats>,
        boundary: Boundary,
    ) -> Result<Self> {
        let ds = Self {
            data,
            n_traj,
            t_count,
            spatial_size,
            channels,
            split,
            normalization,
            boundary,
            family: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = Some(family);
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GitsError::Validation(m));
        if self.n_traj == 0 || self.t_count == 0 || self.spatial_size == 0 || self.channels == 0 {
            return bad(format!(
                "all dimensions must be positive (n_traj={}, t_count={}, spatial_size={}, channels={})",
                self.n_traj, self.t_count, self.spatial_size, self.channels
            ));
        }
        let expected = self.n_traj * self.t_count * self.spatial_size * self.channels;
        if self.data.len() != expected {
            return bad(format!("expected {expected} samples, got {}", self.data.len()));
        }
        if self.split.len() != self.n_traj {
            return bad(format!("split has {} labels for {} trajectories", self.split.len(), self.n_traj));
        }
        if self.normalization.len() != self.channels {
            return bad(format!(
                "normalization has {} entries for {} channels",
                self.normalization.len(),
                self.channels
            ));
        }
        if let Some(s) = self.normalization.iter().find(|s| !(s.std > 0.0) || !s.mean.is_finite()) {
            return bad(format!("invalid normalization statistics {s:?}"));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return bad(format!("non-finite sample at flat offset {i}"));
        }
        Ok(())
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    pub fn spatial_size(&self) -> usize {
        self.spatial_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn family(&self) -> Option<Family> {
        self.family
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn normalization(&self) -> &[ChannelStats] {
        &self.normalization
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Samples per frame (`spatial_size * channels`).
    pub fn frame_len(&self) -> usize {
        self.spatial_size * self.channels
    }

    /// Frame `t` of trajectory `n`, laid out as `(cell, channel)`.
    pub fn frame(&self, n: usize, t: usize) -> &[f32] {
        let len = self.frame_len();
        let off = (n * self.t_count + t) * len;
        &self.data[off..off + len]
    }

    pub fn frame_f64(&self, n: usize, t: usize) -> Vec<f64> {
        self.frame(n, t).iter().map(|&v| f64::from(v)).collect()
    }

    /// Indices of the trajectories carrying `split`, ascending.
    pub fn trajectories(&self, split: Split) -> Vec<usize> {
        (0..self.n_traj).filter(|&n| self.split[n] == split).collect()
    }

    /// Maps a normalized sample of `channel` back to solver units.
    pub fn denormalize(&self, value: f64, channel: usize) -> f64 {
        let s = self.normalization[channel];
        value * s.std + s.mean
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            n_traj: self.n_traj,
            t_count: self.t_count,
            spatial_size: self.spatial_size,
            channels: self.channels,
            boundary: self.boundary,
            family: self.family,
            split: self.split.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// The exact bytes [`write_dataset`] puts in the manifest and payload files.
    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut manifest = serde_json::to_vec_pretty(&self.manifest())?;
        manifest.push(b'\n');
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        Ok((manifest, payload))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    n_traj: usize,
    t_count: usize,
    spatial_size: usize,
    channels: usize,
    boundary: Boundary,
    #[serde(default)]
    family: Option<Family>,
    split: Vec<Split>,
    normalization: Vec<ChannelStats>,
}

/// Manifest and payload paths for a dataset base path. Any extension on
/// `path` is replaced, so `foo`, `foo.json` and `foo.f32` name the same pair.
pub fn dataset_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("f32"))
}

pub fn write_dataset(ds: &TrajectoryDataset, path: &Path) -> Result<()> {
    let (manifest_path, payload_path) = dataset_paths(path);
    let (manifest, payload) = ds.to_bytes()?;
    fs::write(manifest_path, manifest)?;
    fs::write(payload_path, payload)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let (manifest_path, payload_path) = dataset_paths(path);
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| GitsError::Manifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(GitsError::UnsupportedVersion {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let count = manifest
        .n_traj
        .checked_mul(manifest.t_count)
        .and_then(|v| v.checked_mul(manifest.spatial_size))
        .and_then(|v| v.checked_mul(manifest.channels))
        .ok_or_else(|| GitsError::Validation("manifest dimensions overflow".into()))?;
    if count == 0 {
        return Err(GitsError::Validation(format!(
            "manifest dimensions must be positive (n_traj={}, t_count={}, spatial_size={}, channels={})",
            manifest.n_traj, manifest.t_count, manifest.spatial_size, manifest.channels
        )));
    }

    let bytes = fs::read(&payload_path)?;
    if bytes.len() != count * 4 {
        return Err(GitsError::LengthMismatch {
            expected: count * 4,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let ds = TrajectoryDataset::new(
        data,
        manifest.n_traj,
        manifest.t_count,
        manifest.spatial_size,
        manifest.channels,
        manifest.split,
        manifest.normalization,
        manifest.boundary,
    )?;
    Ok(match manifest.family {
        Some(f) => ds.with_family(f),
        None => ds,
    })
}

/// Physical coefficients drawn for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCoefficients {
    pub diffusivity: f64,
    pub viscosity: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    amplitude: f64,
    wavenumber: f64,
    phase: f64,
}

fn trajectory_rng(cfg: &SolverConfig, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_trajectory(cfg: &SolverConfig, index: usize) -> (TrajectoryCoefficients, Vec<Mode>) {
    let mut rng = trajectory_rng(cfg, index);
    let modes = (0..cfg.ic_modes)
        .map(|_| Mode {
            amplitude: rng.gen_range(-1.0..=1.0),
            wavenumber: rng.gen_range(1..=cfg.ic_max_wavenumber) as f64,
            phase: rng.gen_range(0.0..2.0 * PI),
        })
        .collect();
    let coefs = TrajectoryCoefficients {
        diffusivity: cfg.diffusivity.sample(&mut rng),
        viscosity: cfg.viscosity.sample(&mut rng),
        speed: cfg.advection_speed.sample(&mut rng),
    };
    (coefs, modes)
}

/// Initial condition of trajectory `index`: a sum of random Fourier modes
/// sampled at cell centres.
pub fn initial_condition(cfg: &SolverConfig, index: usize) -> Vec<f64> {
    let (_, modes) = draw_trajectory(cfg, index);
    let n = cfg.spatial_size;
    (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            modes
                .iter()
                .map(|m| m.amplitude * (2.0 * PI * m.wavenumber * x + m.phase).sin())
                .sum()
        })
        .collect()
}

pub fn trajectory_coefficients(cfg: &SolverConfig, index: usize) -> TrajectoryCoefficients {
    draw_trajectory(cfg, index).0
}

/// Integrates trajectory `index` from its initial condition and returns the
/// raw (un-normalized) snapshots, `t_count * spatial_size` values.
pub fn simulate_trajectory(cfg: &SolverConfig, index: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let u0 = initial_condition(cfg, index);
    let coefs = trajectory_coefficients(cfg, index);
    integrate(cfg, &coefs, u0).map_err(|reason| GitsError::Generation {
        trajectory: index,
        reason,
    })
}

/// Runs the family's explicit scheme from `u0`, storing a snapshot every
/// `snapshot_stride` steps (the initial state is snapshot 0).
pub fn integrate(
    cfg: &SolverConfig,
    coefs: &TrajectoryCoefficients,
    u0: Vec<f64>,
) -> std::result::Result<Vec<f64>, String> {
    let n = cfg.spatial_size;
    let mut out = Vec::with_capacity(cfg.t_count * n);
    out.extend_from_slice(&u0);
    let mut u = u0;
    let mut next = vec![0.0; n];
    for t in 1..cfg.t_count {
        for _ in 0..cfg.snapshot_stride {
            step(cfg, coefs, &u, &mut next);
            std::mem::swap(&mut u, &mut next);
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(format!("non-finite state at snapshot {t}, cell {i}"));
        }
        out.extend_from_slice(&u);
    }
    Ok(out)
}

fn step(cfg: &SolverConfig, coefs: &TrajectoryCoefficients, u: &[f64], next: &mut [f64]) {
    let n = u.len() as isize;
    let at = |i: isize| -> f64 {
        match cfg.boundary {
            Boundary::Periodic => u[i.rem_euclid(n) as usize],
            Boundary::Neumann => u[i.clamp(0, n - 1) as usize],
        }
    };
    let dx = cfg.dx();
    let lam = cfg.dt / dx;
    let diff_number = |nu: f64| nu * cfg.dt / (dx * dx);

    match cfg.family {
        Family::Diffusion1d => {
            let r = diff_number(coefs.diffusivity);
            for i in 0..n {
                next[i as usize] = at(i) + r * (at(i - 1) - 2.0 * at(i) + at(i + 1));
            }
        }
        Family::Burgers1d | Family::AdvectionDiffusion1d => {
            let (nu, flux, speed): (f64, fn(f64, f64) -> f64, fn(f64, f64) -> f64) =
                match cfg.family {
                    Family::Burgers1d => (coefs.viscosity, |u, _| 0.5 * u * u, |u, _| u.abs()),
                    _ => (coefs.diffusivity, |u, c| c * u, |_, c| c.abs()),
                };
            let c = coefs.speed;
            // Rusanov (local Lax-Friedrichs) interface flux.
            let iface = |l: f64, r: f64| -> f64 {
                let a = speed(l, c).max(speed(r, c));
                0.5 * (flux(l, c) + flux(r, c)) - 0.5 * a * (r - l)
            };
            let r = diff_number(nu);
            for i in 0..n {
                let (ul, uc, ur) = (at(i - 1), at(i), at(i + 1));
                let conv = iface(uc, ur) - iface(ul, uc);
                next[i as usize] = uc - lam * conv + r * (ul - 2.0 * uc + ur);
            }
        }
    }
}

/// Deterministic 80/10/10 trajectory split drawn from the dataset seed.
pub fn assign_splits(n_traj: usize, seed: u64) -> Vec<Split> {
    let n_train = (TRAIN_FRACTION * n_traj as f64).round() as usize;
    let n_val = (VAL_FRACTION * n_traj as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_traj).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::stage_seed(seed, "split"));
    order.shuffle(&mut rng);
    let mut split = vec![Split::Test; n_traj];
    for (rank, &n) in order.iter().enumerate() {
        split[n] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    split
}

pub fn generate_dataset(cfg: &SolverConfig, n_traj: usize) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    if n_traj < MIN_TRAJECTORIES {
        return Err(GitsError::Config(format!(
            "n_traj must be >= {MIN_TRAJECTORIES}, got {n_traj}"
        )));
    }
    let raw: Vec<Vec<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|n| simulate_trajectory(cfg, n))
        .collect::<Result<_>>()?;

    let split = assign_splits(n_traj, cfg.seed);

    // Single channel for every built-in family.
    let train: Vec<&Vec<f64>> = raw
        .iter()
        .zip(&split)
        .filter(|(_, s)| **s == Split::Train)
        .map(|(r, _)| r)
        .collect();
    let count = train.iter().map(|r| r.len()).sum::<usize>() as f64;
    let mean = train.iter().flat_map(|r| r.iter()).sum::<f64>() / count;
    let var = train
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / count;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(GitsError::Generation {
            trajectory: 0,
            reason: format!("training split has degenerate spread (std={std})"),
        });
    }

    let data = raw
        .iter()
        .flat_map(|r| r.iter().map(|v| ((v - mean) / std) as f32))
        .collect();
    Ok(TrajectoryDataset::new(
        data,
        n_traj,
        cfg.t_count,
        cfg.spatial_size,
        1,
        split,
        vec![ChannelStats { mean, std }],
        cfg.boundary,
    )?
    .with_family(cfg.family))
}
