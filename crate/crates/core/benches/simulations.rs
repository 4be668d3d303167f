use std::hint::black_box;

use collusion_core::harness::{self, ExperimentConfig};
use collusion_core::qlearning::AgentConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn config(n_simulations: usize) -> ExperimentConfig {
    ExperimentConfig {
        n_simulations,
        phase2_experiment_count: 200,
        max_iterations: 400_000,
        agent: AgentConfig {
            beta: 5e-5,
            convergence_window: 5_000,
            ..AgentConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn sequential_vs_parallel(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulations");
    group.sample_size(10);
    for n in [4usize, 8] {
        let cfg = config(n);
        group.bench_with_input(BenchmarkId::new("sequential", n), &cfg, |b, cfg| {
            b.iter(|| harness::run_sequential(black_box(cfg)).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &cfg, |b, cfg| {
            b.iter(|| harness::run_parallel(black_box(cfg)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sequential_vs_parallel);
criterion_main!(benches);
