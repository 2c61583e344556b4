use std::hint::black_box;

use caplab::phase_lab::{analytic_phase_grid, default_importance_axis, default_sparsity_axis};
use caplab::toy_models::{loss_and_grads, sample_inputs};
use caplab::{solve_allocation, ImportanceVector, InputDistribution, ModelFamily, ModelSpec, Nonlinearity};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_allocation");
    for &n in &[6usize, 100, 1000] {
        let v = ImportanceVector::new((0..n).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| {
            b.iter(|| solve_allocation(black_box(v), n / 2, 9.0).unwrap())
        });
    }
    group.finish();
}

fn analytic_grid(c: &mut Criterion) {
    let (v, p) = (default_importance_axis(), default_sparsity_axis());
    c.bench_function("analytic_phase_grid/25x25", |b| {
        b.iter(|| analytic_phase_grid(6, 3, black_box(&v), black_box(&p)).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grads/6x3_batch1024");
    let x = sample_inputs(&InputDistribution::new(0.1).unwrap(), 6, 1024, 1).unwrap();
    let w = DMatrix::from_fn(3, 6, |a, i| ((a * 6 + i) as f64).cos() * 0.5);
    for (family, sigma) in [
        (ModelFamily::Regression, Nonlinearity::Quadratic),
        (ModelFamily::Autoencoder, Nonlinearity::Relu),
    ] {
        let spec = ModelSpec::new(family, sigma, 3, ImportanceVector::uniform(6).unwrap()).unwrap();
        let bias = vec![0.0; spec.bias_len()];
        group.bench_function(format!("{}-{}", family.as_str(), sigma.as_str()), |b| {
            b.iter(|| loss_and_grads(&spec, black_box(&w), &bias, black_box(&x)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solve, analytic_grid, training_step);
criterion_main!(benches);
