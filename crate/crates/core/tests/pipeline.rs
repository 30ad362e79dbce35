use gits_core::coverage::WindowList;
use gits_core::data::{generate_dataset, read_dataset, write_dataset};
use gits_core::diagnostics::{evaluate_rollout, subset_geometry, BandEdges};
use gits_core::scoring::{score_both, train_pilot};
use gits_core::selector::{greedy_select, objective_value, sample_uniform};
use gits_core::surrogate::{read_checkpoint, train, write_checkpoint};
use gits_core::{
    Arch, CandidateSet, CoverageSystem, ObjectiveConfig, ScoringConfig, SolverConfig, Split, SurrogateParams,
    TrainConfig,
};
use proptest::prelude::*;

fn small() -> SolverConfig {
    SolverConfig {
        spatial_size: 32,
        t_count: 41,
        ..SolverConfig::default()
    }
}

#[test]
fn end_to_end_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small(), 12).unwrap();
    let path = dir.path().join("heat");
    write_dataset(&ds, &path).unwrap();
    let ds = read_dataset(&path).unwrap();

    let arch = Arch::for_dataset(&ds);
    let c = CandidateSet::build(ds.t_count(), arch.history_len).unwrap();
    assert_eq!(c.len(), 36);
    let pilot_cfg = TrainConfig {
        epochs_max: 2,
        ..TrainConfig::default()
    };
    let pilot = train_pilot(&SurrogateParams::init_persistence(arch, 1), &ds, &c, &pilot_cfg).unwrap();
    let scoring = ScoringConfig {
        horizon: 5,
        batch_traj: 6,
        seed: 3,
    };
    let (grad, loss, grads) = score_both(&pilot, &c, &ds, &scoring, 2).unwrap();
    assert_eq!((grad.scores.len(), loss.scores.len(), grads.len()), (36, 36, 36));
    assert!(grad.scores.iter().all(|s| s.is_finite() && *s >= 0.0));

    let k = c.budget_for_ratio(0.2);
    let obj = ObjectiveConfig::derived(ds.t_count(), k, 1.0, 0.5).unwrap();
    let sel = greedy_select(&grad.scores, &c, &obj, k).unwrap();
    assert_eq!(sel.selected.len(), k);
    let sys = CoverageSystem::new(&c, obj.coverage).unwrap();
    let f = objective_value(&grad.scores, &sys, &obj, &sel.selected).unwrap();
    assert!((f - sel.objective.unwrap()).abs() < 1e-9);

    let mut csv = Vec::new();
    WindowList::build(&c, &obj.coverage).unwrap().write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("m,a,b"));

    let uni = sample_uniform(&c, k, 0).unwrap();
    let geo = subset_geometry(&sel.selected, &uni.selected, &c, 10).unwrap();
    assert!(geo.overlap <= k);

    let cfg = TrainConfig {
        epochs_max: 15,
        ..TrainConfig::default()
    };
    let out = train(&SurrogateParams::init_persistence(arch, 2), &sel.sorted(), &ds, &cfg).unwrap();
    let report = evaluate_rollout(&out.params, &ds, Split::Test, BandEdges::default()).unwrap();
    assert_eq!(report.horizon, ds.t_count() - arch.history_len);
    assert!(report.nrmse.is_finite() && report.nrmse >= 0.0);

    let ckpt = dir.path().join("model.ckpt");
    write_checkpoint(&out.params, &ckpt, 2, 15).unwrap();
    let (back, header) = read_checkpoint(&ckpt).unwrap();
    assert_eq!(back, out.params);
    assert_eq!(header.param_count, arch.param_count());
    let again = evaluate_rollout(&back, &ds, Split::Test, BandEdges::default()).unwrap();
    assert_eq!(again, report);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_returns_distinct_candidates(
        t in 8usize..80,
        ratio in 0.01f64..1.0,
        lambda in 0.0f64..2.0,
        c_win in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let c = CandidateSet::build(t, 4).unwrap();
        let k = c.budget_for_ratio(ratio);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..c.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let obj = ObjectiveConfig::derived(t, k, lambda, c_win).unwrap();
        let r = greedy_select(&scores, &c, &obj, k).unwrap();
        let mut s = r.sorted();
        s.dedup();
        prop_assert_eq!(s.len(), k);
        prop_assert!(s.iter().all(|&i| c.contains(i)));
        prop_assert!(r.gains.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        prop_assert!(r.gains.iter().all(|&g| g >= -1e-12));
    }

    #[test]
    fn uniform_is_sorted_and_in_range(t in 7usize..200, ratio in 0.001f64..1.0) {
        let c = CandidateSet::build(t, 4).unwrap();
        let k = c.budget_for_ratio(ratio);
        let r = sample_uniform(&c, k, 0).unwrap();
        prop_assert_eq!(r.selected.len(), k);
        prop_assert!(r.selected.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(r.selected.iter().all(|&i| c.contains(i)));
    }
}
