use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gits_core::data::generate_dataset;
use gits_core::diagnostics::rollout_nrmse;
use gits_core::surrogate::rollout_loss_grad;
use gits_core::{Arch, SolverConfig, Split, SurrogateParams};

fn surrogate(c: &mut Criterion) {
    let ds = generate_dataset(&SolverConfig::default(), 20).unwrap();
    let p = SurrogateParams::init(Arch::for_dataset(&ds), 0);
    let history: Vec<Vec<f64>> = (0..4).map(|t| ds.frame_f64(0, t)).collect();

    c.bench_function("forward_64_cells", |b| b.iter(|| p.forward(black_box(&history)).unwrap()));
    let batch: Vec<(usize, usize)> = (0..16).map(|n| (n, 20)).collect();
    c.bench_function("loss_grad_h10_batch16", |b| {
        b.iter(|| rollout_loss_grad(&p, black_box(&batch), 10, &ds).unwrap())
    });
    c.bench_function("val_rollout_nrmse", |b| b.iter(|| rollout_nrmse(&p, &ds, Split::Val).unwrap()));
}

criterion_group!(benches, surrogate);
criterion_main!(benches);
