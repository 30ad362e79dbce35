//! Micro autoregressive surrogate.
//!
//! A two-layer periodic/reflective 1D convolution with a `tanh` hidden layer
//! predicts a residual `Δ` from the `L` most recent frames stacked as input
//! channels. The next frame is `clamp(last + Δ)` in normalized space.
//!
//! Parameters live in one flat vector so that optimizers and the scoring
//! code can treat them as a plain point in `R^P`. The layout is
//!
//! ```text
//! w1[hidden][L*channels][taps] | b1[hidden] | w2[channels][hidden][taps] | b2[channels]
//! ```

mod checkpoint;
mod grad;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Boundary;
use crate::error::{GitsError, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use grad::{effective_horizon, rollout_loss_grad, frame_nrmse, NRMSE_EPS};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

pub const DEFAULT_HISTORY_LEN: usize = 4;
pub const DEFAULT_HIDDEN: usize = 8;
pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_CLAMP: f64 = 10.0;

/// Architecture descriptor. `clamp` bounds every predicted sample to
/// `[-clamp, clamp]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub history_len: usize,
    pub hidden: usize,
    pub radius: usize,
    pub channels: usize,
    pub padding: Boundary,
    pub clamp: f64,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            history_len: DEFAULT_HISTORY_LEN,
            hidden: DEFAULT_HIDDEN,
            radius: DEFAULT_RADIUS,
            channels: 1,
            padding: Boundary::Periodic,
            clamp: DEFAULT_CLAMP,
        }
    }
}

impl Arch {
    /// Default architecture matched to a dataset's channels and boundary.
    pub fn for_dataset(ds: &crate::data::TrajectoryDataset) -> Self {
        Self {
            channels: ds.channels(),
            padding: ds.boundary(),
            ..Self::default()
        }
    }

    pub fn taps(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn in_channels(&self) -> usize {
        self.history_len * self.channels
    }

    fn w1_len(&self) -> usize {
        self.hidden * self.in_channels() * self.taps()
    }

    fn b1_off(&self) -> usize {
        self.w1_len()
    }

    fn w2_off(&self) -> usize {
        self.b1_off() + self.hidden
    }

    fn b2_off(&self) -> usize {
        self.w2_off() + self.channels * self.hidden * self.taps()
    }

    pub fn param_count(&self) -> usize {
        self.b2_off() + self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 || self.hidden == 0 || self.channels == 0 {
            return Err(GitsError::Config(format!("degenerate architecture {self:?}")));
        }
        if !(self.clamp > 0.0) {
            return Err(GitsError::Config(format!("clamp must be positive, got {}", self.clamp)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    arch: Arch,
    theta: Vec<f64>,
}

impl SurrogateParams {
    pub fn new(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(GitsError::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                theta.len(),
                arch.param_count()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(GitsError::Validation("non-finite parameter".into()));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            theta: vec![0.0; arch.param_count()],
            arch,
        }
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; arch.param_count()];
        let b1 = 1.0 / ((arch.in_channels() * arch.taps()) as f64).sqrt();
        let b2 = 1.0 / ((arch.hidden * arch.taps()) as f64).sqrt();
        for (i, v) in theta.iter_mut().enumerate() {
            let bound = if i < arch.w2_off() { b1 } else { b2 };
            *v = rng.gen_range(-bound..bound);
        }
        Self { arch, theta }
    }

    /// [`init`](Self::init) with the output layer zeroed, so the initial
    /// model repeats the last history frame.
    pub fn init_persistence(arch: Arch, seed: u64) -> Self {
        let mut p = Self::init(arch, seed);
        let off = arch.w2_off();
        p.theta[off..].iter_mut().for_each(|v| *v = 0.0);
        p
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Returns a copy with `theta` replaced; the length must match.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.arch, theta)
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn check_history<H: AsRef<[f64]>>(&self, history: &[H]) -> Result<usize> {
        let l = self.arch.history_len;
        if history.len() != l {
            return Err(GitsError::Shape(format!(
                "history has {} frames, model expects {l}",
                history.len()
            )));
        }
        let len = history[0].as_ref().len();
        if len == 0 || len % self.arch.channels != 0 {
            return Err(GitsError::Shape(format!(
                "frame length {len} is not a positive multiple of {} channels",
                self.arch.channels
            )));
        }
        let cells = len / self.arch.channels;
        if cells < self.arch.radius + 1 {
            return Err(GitsError::Shape(format!(
                "grid of {cells} cells is too small for kernel radius {}",
                self.arch.radius
            )));
        }
        if history.iter().any(|f| f.as_ref().len() != len) {
            return Err(GitsError::Shape("history frames differ in length".into()));
        }
        Ok(cells)
    }

    /// Predicts the frame following `history` (oldest frame first).
    pub fn forward<H: AsRef<[f64]>>(&self, history: &[H]) -> Result<Vec<f64>> {
        let cells = self.check_history(history)?;
        let net = Net::new(self, cells);
        let inputs: Vec<&[f64]> = history.iter().map(|f| f.as_ref()).collect();
        let mut out = vec![0.0; cells * self.arch.channels];
        net.step(&inputs, &mut out);
        Ok(out)
    }

    /// Autoregressive rollout: each step consumes the `L` most recent frames
    /// of `history ++ predictions`.
    pub fn rollout<H: AsRef<[f64]>>(&self, history: &[H], steps: usize) -> Result<Vec<Vec<f64>>> {
        if steps == 0 {
            return Err(GitsError::Shape("rollout needs at least one step".into()));
        }
        let cells = self.check_history(history)?;
        let net = Net::new(self, cells);
        let l = self.arch.history_len;
        let mut seq: Vec<Vec<f64>> = history.iter().map(|f| f.as_ref().to_vec()).collect();
        for h in 0..steps {
            let mut out = vec![0.0; cells * self.arch.channels];
            {
                let inputs: Vec<&[f64]> = seq[h..h + l].iter().map(Vec::as_slice).collect();
                net.step(&inputs, &mut out);
            }
            seq.push(out);
        }
        Ok(seq.split_off(l))
    }
}

/// Per-step activations kept for the backward pass.
pub(crate) struct StepCache {
    act: Vec<f64>,
    pass: Vec<bool>,
}

/// Forward/backward kernels for one parameter vector on one grid size.
pub(crate) struct Net<'a> {
    arch: Arch,
    theta: &'a [f64],
    cells: usize,
    /// `pad[x * taps + t]` is the source cell for output `x` and tap `t`.
    pad: Vec<usize>,
}

impl<'a> Net<'a> {
    pub(crate) fn new(params: &'a SurrogateParams, cells: usize) -> Self {
        let arch = params.arch;
        let taps = arch.taps();
        let r = arch.radius as isize;
        let n = cells as isize;
        let mut pad = Vec::with_capacity(cells * taps);
        for x in 0..n {
            for t in 0..taps as isize {
                let j = x + t - r;
                let src = match arch.padding {
                    Boundary::Periodic => j.rem_euclid(n),
                    // Half-sample symmetric reflection: -1 -> 0, n -> n-1.
                    Boundary::Neumann => {
                        let period = 2 * n;
                        let m = j.rem_euclid(period);
                        if m < n {
                            m
                        } else {
                            period - 1 - m
                        }
                    }
                };
                pad.push(src as usize);
            }
        }
        Self {
            arch,
            theta: &params.theta,
            cells,
            pad,
        }
    }

    pub(crate) fn frame_len(&self) -> usize {
        self.cells * self.arch.channels
    }

    pub(crate) fn step(&self, inputs: &[&[f64]], out: &mut [f64]) -> StepCache {
        let a = &self.arch;
        let (s, ch, taps, hid) = (self.cells, a.channels, a.taps(), a.hidden);
        let inc = a.in_channels();
        let th = self.theta;
        let b1 = &th[a.b1_off()..a.w2_off()];
        let w2 = &th[a.w2_off()..a.b2_off()];
        let b2 = &th[a.b2_off()..];

        let mut act = vec![0.0; hid * s];
        for h in 0..hid {
            let z = &mut act[h * s..(h + 1) * s];
            z.fill(b1[h]);
            for ic in 0..inc {
                let (l, c) = (ic / ch, ic % ch);
                let frame = inputs[l];
                for t in 0..taps {
                    let w = th[(h * inc + ic) * taps + t];
                    for (x, zx) in z.iter_mut().enumerate() {
                        *zx += w * frame[self.pad[x * taps + t] * ch + c];
                    }
                }
            }
            z.iter_mut().for_each(|v| *v = v.tanh());
        }

        let last = inputs[inputs.len() - 1];
        let mut pass = vec![false; s * ch];
        for c in 0..ch {
            for x in 0..s {
                let mut d = b2[c];
                for h in 0..hid {
                    let ah = &act[h * s..(h + 1) * s];
                    for t in 0..taps {
                        d += w2[(c * hid + h) * taps + t] * ah[self.pad[x * taps + t]];
                    }
                }
                let i = x * ch + c;
                let v = last[i] + d;
                pass[i] = v.abs() <= a.clamp;
                out[i] = v.clamp(-a.clamp, a.clamp);
            }
        }
        StepCache { act, pass }
    }

    /// Accumulates the vector-Jacobian product of one step: `dout` is the
    /// adjoint of the step output; parameter adjoints go into `grad` and
    /// input-frame adjoints into `dinputs` (same order as `inputs`).
    pub(crate) fn step_backward(
        &self,
        inputs: &[&[f64]],
        cache: &StepCache,
        dout: &[f64],
        grad: &mut [f64],
        dinputs: &mut [Vec<f64>],
    ) {
        let a = &self.arch;
        let (s, ch, taps, hid) = (self.cells, a.channels, a.taps(), a.hidden);
        let inc = a.in_channels();
        let th = self.theta;
        let (b1_off, w2_off, b2_off) = (a.b1_off(), a.w2_off(), a.b2_off());

        let dv: Vec<f64> = dout
            .iter()
            .zip(&cache.pass)
            .map(|(&g, &p)| if p { g } else { 0.0 })
            .collect();
        let l_last = dinputs.len() - 1;
        for (d, g) in dinputs[l_last].iter_mut().zip(&dv) {
            *d += g;
        }

        let mut da = vec![0.0; hid * s];
        for c in 0..ch {
            for x in 0..s {
                let g = dv[x * ch + c];
                if g == 0.0 {
                    continue;
                }
                grad[b2_off + c] += g;
                for h in 0..hid {
                    for t in 0..taps {
                        let wi = w2_off + (c * hid + h) * taps + t;
                        let src = h * s + self.pad[x * taps + t];
                        grad[wi] += g * cache.act[src];
                        da[src] += th[wi] * g;
                    }
                }
            }
        }

        for h in 0..hid {
            let range = h * s..(h + 1) * s;
            let dz: Vec<f64> = da[range.clone()]
                .iter()
                .zip(&cache.act[range])
                .map(|(&g, &y)| g * (1.0 - y * y))
                .collect();
            grad[b1_off + h] += dz.iter().sum::<f64>();
            for ic in 0..inc {
                let (l, c) = (ic / ch, ic % ch);
                let frame = inputs[l];
                for t in 0..taps {
                    let wi = (h * inc + ic) * taps + t;
                    let w = th[wi];
                    let mut gw = 0.0;
                    for (x, &g) in dz.iter().enumerate() {
                        let src = self.pad[x * taps + t] * ch + c;
                        gw += g * frame[src];
                        dinputs[l][src] += w * g;
                    }
                    grad[wi] += gw;
                }
            }
        }
    }
}
