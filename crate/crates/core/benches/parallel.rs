//! Parallel versus sequential execution of the data-parallel kernels.
//!
//! Each kernel runs on a one-thread pool and on a pool with every core. Run
//! with `--no-default-features` to time the sequential build instead of the
//! rayon one; the group name records which build produced the numbers.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nonlin_core::analysis::pairwise_dtw_sequences;
use nonlin_core::rng::{normal_matrix, rng};
use nonlin_core::transport::CostMatrix;
use nonlin_core::{par, run_sweep, ActivationKind, SampleMatrix, SweepSpec};
use rand::Rng;
use rayon::ThreadPool;

fn pools() -> Vec<(String, ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|t| (format!("{t}-threads"), rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap()))
        .collect()
}

fn group_name(kernel: &str) -> String {
    let build = if par::is_parallel() { "rayon" } else { "sequential" };
    format!("{kernel}/{build}")
}

fn sweep(c: &mut Criterion) {
    let mut spec = SweepSpec::new(ActivationKind::Gelu, 1);
    spec.means = nonlin_core::synth::linspace(-5.0, 5.0, 4);
    spec.stds = vec![1.0, 0.1];
    spec.dim = 32;
    spec.n = 200;
    let mut g = c.benchmark_group(group_name("sweep"));
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| pool.install(|| run_sweep(&spec).unwrap())));
    }
    g.finish();
}

fn cost_matrix(c: &mut Criterion) {
    let p = SampleMatrix::new(normal_matrix(&mut rng(2), 1000, 64)).unwrap();
    let q = SampleMatrix::new(normal_matrix(&mut rng(3), 1000, 64)).unwrap();
    let mut g = c.benchmark_group(group_name("cost_matrix"));
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| CostMatrix::squared_euclidean(&p, &q).unwrap()))
        });
    }
    g.finish();
}

fn pairwise_dtw(c: &mut Criterion) {
    let mut r = rng(4);
    let seqs: Vec<Vec<f64>> = (0..24)
        .map(|_| {
            let len = r.random_range(40..120);
            (0..len).map(|_| r.random::<f64>()).collect()
        })
        .collect();
    let labels: Vec<String> = (0..seqs.len()).map(|i| format!("m{i}")).collect();
    let mut g = c.benchmark_group(group_name("pairwise_dtw"));
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| pairwise_dtw_sequences(labels.clone(), &seqs).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, cost_matrix, pairwise_dtw);
criterion_main!(benches);
