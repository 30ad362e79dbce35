use crate::data::TrajectoryDataset;
use crate::error::{GitsError, Result};

use super::{Net, StepCache, SurrogateParams};

/// Guards the frame-relative error against all-zero targets.
pub const NRMSE_EPS: f64 = 1e-12;

/// `H_k = min(H, T_c - 1 - k)`.
pub fn effective_horizon(horizon: usize, t_count: usize, k: usize) -> usize {
    horizon.min(t_count - 1 - k)
}

/// Frame-relative error `‖a − b‖₂ / (‖b‖₂ + ε)` over all cells and channels.
pub fn frame_nrmse(pred: &[f64], target: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = target.iter().map(|b| b * b).sum();
    num.sqrt() / (den.sqrt() + NRMSE_EPS)
}

/// Short-rollout loss and its exact parameter gradient.
///
/// For each `(trajectory, k)` pair the model is seeded with ground-truth
/// frames `k-L+1..=k` and rolled out `H_k` steps; the pair loss is the mean
/// over steps of the squared frame NRMSE, and the batch loss is the mean over
/// pairs. The gradient is back-propagated through every unrolled step,
/// with the output clamp passing gradient only inside its bound.
pub fn rollout_loss_grad(
    params: &SurrogateParams,
    batch: &[(usize, usize)],
    horizon: usize,
    ds: &TrajectoryDataset,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(GitsError::EmptyBatch);
    }
    if horizon == 0 {
        return Err(GitsError::Shape("rollout horizon must be >= 1".into()));
    }
    let arch = params.arch();
    if arch.channels != ds.channels() {
        return Err(GitsError::Shape(format!(
            "model has {} channels, dataset has {}",
            arch.channels,
            ds.channels()
        )));
    }
    let l = arch.history_len;
    let t_count = ds.t_count();
    let hi = t_count.saturating_sub(2);
    for &(n, k) in batch {
        if k < l || k > hi || t_count < 2 {
            return Err(GitsError::InvalidStart { k, lo: l, hi });
        }
        if n >= ds.n_traj() {
            return Err(GitsError::Shape(format!(
                "trajectory {n} out of range ({} trajectories)",
                ds.n_traj()
            )));
        }
    }

    let net = Net::new(params, ds.spatial_size());
    let mut grad = vec![0.0; params.param_count()];
    let mut loss = 0.0;
    let weight = 1.0 / batch.len() as f64;
    for &(n, k) in batch {
        loss += weight * pair_loss_grad(&net, ds, n, k, horizon, weight, &mut grad);
    }
    Ok((loss, grad))
}

/// Rolls out one pair, returns its loss, and adds `weight * ∇loss` to `grad`.
fn pair_loss_grad(
    net: &Net<'_>,
    ds: &TrajectoryDataset,
    n: usize,
    k: usize,
    horizon: usize,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let l = net.arch.history_len;
    let hk = effective_horizon(horizon, ds.t_count(), k);
    let len = net.frame_len();

    let mut seq: Vec<Vec<f64>> = (k + 1 - l..=k).map(|t| ds.frame_f64(n, t)).collect();
    let mut caches: Vec<StepCache> = Vec::with_capacity(hk);
    let mut dpred: Vec<Vec<f64>> = Vec::with_capacity(hk);
    let mut loss = 0.0;
    let step_weight = weight / hk as f64;

    for h in 0..hk {
        let mut out = vec![0.0; len];
        let cache = {
            let inputs: Vec<&[f64]> = seq[h..h + l].iter().map(Vec::as_slice).collect();
            net.step(&inputs, &mut out)
        };
        let target = ds.frame_f64(n, k + 1 + h);
        let norm = target.iter().map(|b| b * b).sum::<f64>().sqrt() + NRMSE_EPS;
        let scale = 1.0 / (norm * norm);
        let mut sq = 0.0;
        let d: Vec<f64> = out
            .iter()
            .zip(&target)
            .map(|(a, b)| {
                sq += (a - b) * (a - b);
                2.0 * (a - b) * scale * step_weight
            })
            .collect();
        loss += sq * scale;
        caches.push(cache);
        dpred.push(d);
        seq.push(out);
    }

    let mut adj: Vec<Vec<f64>> = vec![vec![0.0; len]; l + hk];
    for h in (0..hk).rev() {
        for (a, d) in adj[h + l].iter_mut().zip(&dpred[h]) {
            *a += d;
        }
        let (lo, hi) = adj.split_at_mut(h + l);
        let inputs: Vec<&[f64]> = seq[h..h + l].iter().map(Vec::as_slice).collect();
        net.step_backward(&inputs, &caches[h], &hi[0], grad, &mut lo[h..h + l]);
    }

    loss / hk as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Boundary, ChannelStats, Split};
    use crate::surrogate::Arch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(t_count: usize, cells: usize, seed: u64) -> TrajectoryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let data = (0..n * t_count * cells)
            .map(|_| rng.gen_range(-1.5f32..1.5))
            .collect();
        TrajectoryDataset::new(
            data,
            n,
            t_count,
            cells,
            1,
            vec![Split::Train, Split::Val, Split::Test],
            vec![ChannelStats { mean: 0.0, std: 1.0 }],
            Boundary::Periodic,
        )
        .unwrap()
    }

    fn tiny() -> Arch {
        Arch {
            hidden: 3,
            radius: 1,
            ..Arch::default()
        }
    }

    #[test]
    fn horizon_truncates_at_the_tail() {
        assert_eq!(effective_horizon(10, 101, 99), 1);
        assert_eq!(effective_horizon(10, 101, 4), 10);
        assert_eq!(effective_horizon(10, 101, 95), 5);
    }

    #[test]
    fn tail_start_reduces_to_one_step_loss() {
        let ds = random_dataset(12, 8, 1);
        let p = SurrogateParams::init(tiny(), 3);
        let k = ds.t_count() - 2;
        let (a, ga) = rollout_loss_grad(&p, &[(0, k)], 10, &ds).unwrap();
        let (b, gb) = rollout_loss_grad(&p, &[(0, k)], 1, &ds).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);

        let hist: Vec<Vec<f64>> = (k - 3..=k).map(|t| ds.frame_f64(0, t)).collect();
        let pred = p.forward(&hist).unwrap();
        let expect = frame_nrmse(&pred, &ds.frame_f64(0, k + 1)).powi(2);
        assert!((a - expect).abs() < 1e-14);
    }

    #[test]
    fn loss_matches_explicit_rollout() {
        let ds = random_dataset(16, 8, 2);
        let p = SurrogateParams::init(tiny(), 5);
        let (k, h) = (6, 4);
        let hist: Vec<Vec<f64>> = (k - 3..=k).map(|t| ds.frame_f64(1, t)).collect();
        let roll = p.rollout(&hist, h).unwrap();
        let expect = roll
            .iter()
            .enumerate()
            .map(|(i, f)| frame_nrmse(f, &ds.frame_f64(1, k + 1 + i)).powi(2))
            .sum::<f64>()
            / h as f64;
        let (loss, _) = rollout_loss_grad(&p, &[(1, k)], h, &ds).unwrap();
        assert!((loss - expect).abs() < 1e-13);
    }

    #[test]
    fn invalid_starts_and_empty_batches() {
        let ds = random_dataset(12, 8, 1);
        let p = SurrogateParams::init(tiny(), 3);
        assert!(matches!(
            rollout_loss_grad(&p, &[], 1, &ds),
            Err(GitsError::EmptyBatch)
        ));
        assert!(matches!(
            rollout_loss_grad(&p, &[(0, 3)], 1, &ds),
            Err(GitsError::InvalidStart { k: 3, .. })
        ));
        assert!(matches!(
            rollout_loss_grad(&p, &[(0, 11)], 1, &ds),
            Err(GitsError::InvalidStart { k: 11, .. })
        ));
        assert!(rollout_loss_grad(&p, &[(0, 10)], 1, &ds).is_ok());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let ds = random_dataset(14, 10, 7);
        for padding in [Boundary::Periodic, Boundary::Neumann] {
            let arch = Arch { padding, ..tiny() };
            let p = SurrogateParams::init(arch, 13);
            let batch = [(0, 4), (2, 9), (1, 12)];
            let (_, g) = rollout_loss_grad(&p, &batch, 3, &ds).unwrap();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for i in 0..p.param_count() {
                let mut up = p.theta().to_vec();
                let mut dn = p.theta().to_vec();
                up[i] += h;
                dn[i] -= h;
                let (lu, _) = rollout_loss_grad(&p.with_theta(up).unwrap(), &batch, 3, &ds).unwrap();
                let (ld, _) = rollout_loss_grad(&p.with_theta(dn).unwrap(), &batch, 3, &ds).unwrap();
                let fd = (lu - ld) / (2.0 * h);
                let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "{padding:?}: worst relative error {worst}");
        }
    }

    #[test]
    fn clamped_outputs_block_the_gradient() {
        let ds = random_dataset(10, 8, 3);
        let arch = Arch {
            clamp: 0.1,
            ..tiny()
        };
        let mut p = SurrogateParams::init(arch, 1);
        let b2 = arch.param_count() - 1;
        p.theta_mut()[b2] = 50.0;
        let (_, g) = rollout_loss_grad(&p, &[(0, 5)], 2, &ds).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
