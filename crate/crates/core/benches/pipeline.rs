use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use sensorplace::lidar::{LidarConfig, LidarProblem};
use sensorplace::objective::{BayesSetup, Criterion as Crit, ObjectiveFn};
use sensorplace::pipeline::{run_design, AnalyticProblem, KernelChoice};
use sensorplace::sqp::SqpConfig;

fn surrogate_design(c: &mut Criterion) {
    let serial = ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut group = c.benchmark_group("surrogate_design");
    group.sample_size(10);
    for n in [800, 3200] {
        let setup = BayesSetup::new(0.01, 0.01, Crit::A).unwrap();
        let p = AnalyticProblem::new(KernelChoice::Gaussian, n, 0.2, setup).unwrap();
        let run = || {
            let sur = p.surrogate(&p.node_budget(8.0).unwrap()).unwrap();
            run_design(&sur, None, p.budget(), &p.rounding_plan(), &SqpConfig::default()).unwrap()
        };
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| b.iter(run));
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| b.iter(|| serial.install(run)));
    }
    group.finish();
}

fn lidar_dense_value(c: &mut Criterion) {
    let serial = ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut group = c.benchmark_group("lidar_dense_value");
    group.sample_size(10);
    let p = LidarProblem::new(LidarConfig {
        n_d: 20,
        n_r: 20,
        n_x: 20,
        ..LidarConfig::default()
    })
    .unwrap();
    let dense = p.streamed_dense(10_000).unwrap();
    let w = vec![p.budget() / p.n_weights() as f64; p.n_weights()];
    group.bench_function("parallel", |b| b.iter(|| dense.value(&w).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| serial.install(|| dense.value(&w).unwrap())));
    group.finish();
}

criterion_group!(benches, surrogate_design, lidar_dense_value);
criterion_main!(benches);
