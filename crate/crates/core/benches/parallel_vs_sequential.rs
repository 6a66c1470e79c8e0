use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use observer_pi::experiments::{closed_form_h, linear_excitation, linear_problem};
use observer_pi::linalg::Vector;
use observer_pi::pi::{assemble_labels, run_many};
use observer_pi::{
    extract_windows, sample_stabilizing_policy, simulate_linear, ActivationCoeffs, CostConfig,
    Execution, PiConfig, QuadraticRegressor, SystemModel,
};

const MODES: [(&str, Execution); 2] =
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn labels(c: &mut Criterion) {
    let model = SystemModel::linear_pendulum();
    let cost = CostConfig::pendulum_default();
    let h = closed_form_h(&model, &cost).unwrap();
    let policy = sample_stabilizing_policy(&model, 1, 10_000).unwrap();
    let traj = simulate_linear(
        &model,
        &policy,
        &linear_excitation(1),
        &Vector::zeros(2),
        &Vector::from_vec(vec![-1.0, 1.0]),
        50_000,
    )
    .unwrap();
    let windows = extract_windows(&traj, 2).unwrap();
    let inputs: Vec<Vector> = windows.iter().map(|w| w.x_k.clone()).collect();
    let mut g = c.benchmark_group("labels_50k");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| assemble_labels(black_box(&windows), &h, &cost, exec).unwrap())
        });
    }
    g.finish();
    let mut g = c.benchmark_group("design_matrix_50k");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                QuadraticRegressor::new(black_box(&inputs), ActivationCoeffs::pure_quadratic(), exec)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn multi_seed(c: &mut Criterion) {
    let model = SystemModel::linear_pendulum();
    let cost = CostConfig::pendulum_default();
    let problem = linear_problem(model.clone(), cost).unwrap();
    let starts: Vec<_> = (1..=8u64)
        .map(|s| (s, sample_stabilizing_policy(&model, s, 10_000).unwrap()))
        .collect();
    let cfg = PiConfig { max_outer: 4, ..PiConfig::default() };
    let exc = linear_excitation(0);
    let mut g = c.benchmark_group("policy_iteration_8_seeds");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_many(&problem, black_box(&starts), &cfg, &exc, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, labels, multi_seed);
criterion_main!(benches);
