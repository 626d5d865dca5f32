use std::sync::Arc;

use coupled_dr::experiments::{burgers_prior, BurgersModel, ConditionedDiffusion};
use coupled_dr::{
    alternating_decomposition, assemble_hy, sample_jacobians, GaussianPrior, Model, OrthonormalBasis, Space,
    StorageMode,
};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn diagnostics(c: &mut Criterion) {
    let model = Arc::new(ConditionedDiffusion::new(100, 0.01).unwrap());
    let samples = sample_jacobians(model, &GaussianPrior::standard(100), 500, 0, StorageMode::Dense).unwrap();
    let goal = OrthonormalBasis::window(100, 20, 10, Space::Input).unwrap();
    c.bench_function("assemble_hy d=m=100 M=500", |b| b.iter(|| assemble_hy(black_box(&samples), &goal).unwrap()));

    let v0 = OrthonormalBasis::random(100, 10, 1, Space::Output).unwrap();
    c.bench_function("alternating r=s=10 d=m=100 M=500", |b| {
        b.iter(|| alternating_decomposition(black_box(&samples), 10, 10, &v0, 10, 1e-10).unwrap())
    });
}

fn burgers(c: &mut Criterion) {
    let model = BurgersModel::new(50, 1e-3, 0.1, 1e-3).unwrap();
    let prior = burgers_prior(&model.grid_points(), 0.1, 1.0, false).unwrap();
    let x = prior.mean().clone();
    c.bench_function("burgers forward N=50", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    c.bench_function("burgers jacobian N=50", |b| b.iter(|| model.jacobian(black_box(&x)).unwrap()));
}

criterion_group!(benches, diagnostics, burgers);
criterion_main!(benches);
