use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use adiabat::exec::Execution;
use adiabat::metrics::{ensemble_target_and_gradient, EvalSettings};
use adiabat::ode::SolverOptions;
use adiabat::optimizer::{draw_seed, rng_for};
use adiabat::recipes;
use adiabat::simulator::{offset_sweep, PulseTrainConfig};

fn target_and_gradient(c: &mut Criterion) {
    let problem = recipes::afp_2p3_cycles(0).unwrap();
    let x = draw_seed(
        problem.ensemble.num_params(),
        (-1.0, 1.0),
        &mut rng_for(0, 0),
    );
    let mut group = c.benchmark_group("afp_target_and_gradient");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let settings = EvalSettings {
            execution: exec,
            ..problem.settings
        };
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &settings,
            |b, s| b.iter(|| ensemble_target_and_gradient(&problem.ensemble, &x, s).unwrap()),
        );
    }
    group.finish();
}

fn train_offset_sweep(c: &mut Criterion) {
    let problem = recipes::afp_2p3_cycles(0).unwrap();
    let x = draw_seed(
        problem.ensemble.num_params(),
        (-1.0, 1.0),
        &mut rng_for(0, 0),
    );
    let cfg = PulseTrainConfig::new(1, 10.0, 100.0, 20.0);
    let grid: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.05).collect();
    let mut group = c.benchmark_group("offset_sweep");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| {
                offset_sweep(
                    &problem.ensemble.family,
                    &x,
                    1.0,
                    200,
                    &grid,
                    &cfg,
                    None,
                    &SolverOptions::optimization(),
                    exec,
                )
            })
        });
    }
    group.finish();
}

criterion_group!(benches, target_and_gradient, train_offset_sweep);
criterion_main!(benches);
