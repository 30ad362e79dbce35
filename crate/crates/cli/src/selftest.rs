//! Brute-force oracle suites runnable from the binary.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use gits_core::coverage::{kernel_global, GlobalKernel};
use gits_core::data::ChannelStats;
use gits_core::selector::{greedy_select, objective_value};
use gits_core::surrogate::rollout_loss_grad;
use gits_core::{
    Arch, Boundary, CandidateSet, CoverageSystem, GitsError, ObjectiveConfig, Result, Split, SurrogateParams,
    TrajectoryDataset,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Greedy,
    Coverage,
    Submodularity,
    Gradient,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Greedy, Suite::Coverage, Suite::Submodularity, Suite::Gradient];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Greedy => "greedy",
            Suite::Coverage => "coverage",
            Suite::Submodularity => "submodularity",
            Suite::Gradient => "gradient",
        }
    }
}

impl FromStr for Suite {
    type Err = GitsError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| GitsError::Config(format!("unknown suite '{s}'")))
    }
}

/// Test-only injection points.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub kernel: GlobalKernel,
}

impl Default for Hooks {
    fn default() -> Self {
        Self { kernel: kernel_global }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelftestReport {
    pub results: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<14} {:>7.3}s  {}", r.suite.name(), r.elapsed_s, r.detail)?;
        }
        let failed = self.results.iter().filter(|r| !r.passed).count();
        write!(f, "{} suites, {failed} failed", self.results.len())
    }
}

pub fn run_selftest(suites: &[Suite], hooks: Hooks) -> SelftestReport {
    let results = suites
        .iter()
        .map(|&suite| {
            let start = Instant::now();
            let outcome = match suite {
                Suite::Greedy => greedy_suite(),
                Suite::Coverage => coverage_suite(),
                Suite::Submodularity => submodularity_suite(hooks.kernel),
                Suite::Gradient => gradient_suite(),
            };
            let (passed, detail) = match outcome {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            SuiteResult {
                suite,
                passed,
                detail,
                elapsed_s: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    SelftestReport { results }
}

type Outcome = std::result::Result<String, String>;

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

fn greedy_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bound = 1.0 - (-1.0f64).exp();
    let mut worst = f64::INFINITY;
    for trial in 0..40 {
        let t = rng.gen_range(8..=16);
        let c = CandidateSet::build(t, 4).map_err(|e| e.to_string())?;
        let k = rng.gen_range(2..=4.min(c.len()));
        let obj = ObjectiveConfig::derived(t, k, rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0))
            .map_err(|e| e.to_string())?;
        let scores: Vec<f64> = (0..c.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let sys = CoverageSystem::new(&c, obj.coverage).map_err(|e| e.to_string())?;
        let g = greedy_select(&scores, &c, &obj, k).map_err(|e| e.to_string())?;
        let best = subsets(c.len(), k)
            .iter()
            .map(|s| {
                let sel: Vec<usize> = s.iter().map(|&p| c.indices()[p]).collect();
                objective_value(&scores, &sys, &obj, &sel).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let f = g.objective.unwrap_or(0.0);
        if f < bound * best - 1e-9 {
            return Err(format!("trial {trial}: greedy {f} < bound on optimum {best}"));
        }
        worst = worst.min(f / best);
    }
    Ok(format!("40 instances, worst ratio {worst:.4}"))
}

fn coverage_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = CandidateSet::build(101, 4).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.gen_range(1..=c.len());
        let obj = ObjectiveConfig::derived(101, k, 1.0, 0.5).map_err(|e| e.to_string())?;
        let sys = CoverageSystem::new(&c, obj.coverage).map_err(|e| e.to_string())?;
        let mut sel = c.indices().to_vec();
        sel.shuffle(&mut rng);
        sel.truncate(k);
        let mut state = sys.empty_state();
        for &j in &sel {
            state = sys.state_update(&state, j).map_err(|e| e.to_string())?;
        }
        let (cov, win) = sys.coverage_values(&sel).map_err(|e| e.to_string())?;
        worst = worst
            .max((state.global_total() - cov).abs())
            .max((state.window_total() - win).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("20 selections, max deviation {worst:.1e}"))
    } else {
        Err(format!("incremental totals deviate by {worst:e}"))
    }
}

fn submodularity_suite(kernel: GlobalKernel) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let c = CandidateSet::build(40, 4).map_err(|e| e.to_string())?;
    let obj = ObjectiveConfig::derived(40, 4, 1.0, 0.0).map_err(|e| e.to_string())?;
    let sys = CoverageSystem::new(&c, obj.coverage).map_err(|e| e.to_string())?;
    let f = |s: &[usize]| sys.coverage_values_with(s, kernel).map(|v| v.0).unwrap();
    for trial in 0..200 {
        let mut pool = c.indices().to_vec();
        pool.shuffle(&mut rng);
        let nb = rng.gen_range(0..8);
        let na = rng.gen_range(0..=nb);
        let b = &pool[..nb];
        let a = &pool[..na];
        let x = pool[nb];
        let with = |s: &[usize]| {
            let mut v = s.to_vec();
            v.push(x);
            v
        };
        let da = f(&with(a)) - f(a);
        let db = f(&with(b)) - f(b);
        if da < -1e-12 {
            return Err(format!("trial {trial}: adding {x} decreased coverage by {}", -da));
        }
        if da < db - 1e-12 {
            return Err(format!("trial {trial}: gain {da} on |A|={na} below gain {db} on |B|={nb}"));
        }
    }
    Ok("200 nested pairs monotone and diminishing".into())
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (n, t, cells) = (3, 12, 8);
    let data = (0..n * t * cells).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let ds = TrajectoryDataset::new(
        data,
        n,
        t,
        cells,
        1,
        vec![Split::Train, Split::Val, Split::Test],
        vec![ChannelStats { mean: 0.0, std: 1.0 }],
        Boundary::Periodic,
    )
    .map_err(|e| e.to_string())?;
    let arch = Arch {
        hidden: 2,
        radius: 1,
        ..Arch::default()
    };
    let p = SurrogateParams::init(arch, 5);
    let batch = [(0, 4), (1, 7), (2, t - 2)];
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for horizon in [1, 3] {
        let (_, g) = rollout_loss_grad(&p, &batch, horizon, &ds).map_err(|e| e.to_string())?;
        for i in 0..p.param_count() {
            let mut up = p.theta().to_vec();
            let mut dn = up.clone();
            up[i] += h;
            dn[i] -= h;
            let lu = rollout_loss_grad(&p.with_theta(up).unwrap(), &batch, horizon, &ds).unwrap().0;
            let ld = rollout_loss_grad(&p.with_theta(dn).unwrap(), &batch, horizon, &ds).unwrap().0;
            let fd = (lu - ld) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8));
        }
    }
    if worst < 1e-4 {
        Ok(format!("{} params, worst relative error {worst:.1e}", p.param_count()))
    } else {
        Err(format!("worst relative error {worst:e}"))
    }
}
