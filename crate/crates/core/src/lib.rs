//! Gradient-informed temporal sampling (GITS) for autoregressive PDE
//! surrogates.
//!
//! Given a set of fully generated trajectories, GITS picks a budget of `K`
//! shared temporal start indices. Each candidate start is scored by the
//! gradient norm of a short-rollout loss under a lightly trained pilot
//! model, and the final set maximizes
//!
//! ```text
//! F(S) = Σ_{k∈S} s_k + λ_cov·F_cov(S) + c_win·F_win(S)
//! ```
//!
//! by incremental greedy, where `F_cov` and `F_win` are facility-location
//! coverage terms over the candidate time axis.
//!
//! Module map:
//!
//! * [`data`] synthetic finite-difference trajectories and their on-disk format
//! * [`surrogate`] micro convolutional surrogate with exact rollout gradients
//! * [`scoring`] candidate set, pilot training and pointwise scores
//! * [`coverage`] global and sliding-window coverage with incremental states
//! * [`selector`] greedy maximization and baseline samplers
//! * [`diagnostics`] rollout metrics, subset geometry, score-utility alignment

pub mod coverage;
pub mod data;
pub mod diagnostics;
mod error;
pub mod scoring;
pub mod selector;
pub mod surrogate;

pub use coverage::{CoverageConfig, CoverageState, CoverageSystem, WindowList};
pub use data::{Boundary, Family, SolverConfig, Split, TrajectoryDataset};
pub use diagnostics::{GeometryReport, RolloutReport};
pub use error::{GitsError, Result};
pub use scoring::{CandidateScores, CandidateSet, ScoreKind, ScoringConfig};
pub use selector::{ObjectiveConfig, SamplerKind, SelectionResult};
pub use surrogate::{Arch, SurrogateParams, TrainConfig};

/// Derives an independent RNG stream for a named stage from a base seed.
///
/// Stage seeds are mixed with splitmix64 so that `stage_seed(s, "pilot")` and
/// `stage_seed(s, "train")` never collide for nearby base seeds.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in stage.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
