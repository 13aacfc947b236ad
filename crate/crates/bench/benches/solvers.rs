use criterion::{criterion_group, criterion_main, Criterion};
use term_core::data::{generate, Scenario, ScenarioSpec};
use term_core::superquantile::{ChainConfig, ChainSolutions};
use term_core::{batch_solve, stochastic_solve, LossKind, SolverConfig, TiltTree};

fn solvers(c: &mut Criterion) {
    let ds = generate(&ScenarioSpec::new(
        Scenario::linear_regression(400, 5),
        0.2,
        3,
    ))
    .unwrap();
    let model = ds.model(LossKind::Squared).unwrap();
    let n = ds.len();
    let mut g = c.benchmark_group("solvers");
    g.sample_size(20);
    for t in [-2.0, 2.0] {
        let tree = TiltTree::flat(t, n).unwrap();
        let cfg = SolverConfig {
            step_size: 0.02,
            max_iters: 500,
            grad_tol: 0.0,
            ..Default::default()
        };
        g.bench_function(format!("batch/t={t},500 iters"), |b| {
            b.iter(|| batch_solve(&model, &tree, &cfg).unwrap())
        });
    }
    let tree = TiltTree::flat(1.0, n).unwrap();
    let cfg = SolverConfig {
        step_size: 0.01,
        max_iters: 2_000,
        minibatch_size: 20,
        ..Default::default()
    };
    g.bench_function("stochastic/t=1,2000 iters", |b| {
        b.iter(|| stochastic_solve(&model, &tree, &cfg).unwrap())
    });
    g.finish();
}

fn chain(c: &mut Criterion) {
    let ds = generate(&ScenarioSpec::new(Scenario::point_estimation(100), 0.2, 1)).unwrap();
    let model = ds.model(LossKind::SquaredDistance).unwrap();
    let cfg = ChainConfig {
        solver: SolverConfig {
            step_size: 2e-4,
            max_iters: 2_000,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut g = c.benchmark_group("superquantile");
    g.sample_size(10);
    g.bench_function("chain solutions/2000 iters", |b| {
        b.iter(|| ChainSolutions::solve(&model, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, solvers, chain);
criterion_main!(benches);
