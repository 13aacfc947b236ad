use term_core::data::generate;
use term_core::experiments::logistic_desk_spec;
use term_core::solver::estimate_step_size;
use term_core::superquantile::{q_zero_grid_oracle, GridBox};
use term_core::{
    batch_solve, stochastic_solve, LossKind, SampleModel, SolverConfig, Termination, TiltTree,
};

fn desk() -> SampleModel {
    generate(&logistic_desk_spec())
        .unwrap()
        .model(LossKind::Squared)
        .unwrap()
}

#[test]
fn positive_tilt_descent_is_monotone_with_estimated_step() {
    let model = desk();
    let tree = TiltTree::flat(2.0, 200).unwrap();
    let init = vec![0.0; 3];
    let alpha = estimate_step_size(&model, &tree, std::slice::from_ref(&init)).unwrap();
    // stay well inside the stable range away from the start point too
    let cfg = SolverConfig {
        step_size: 0.5 * alpha,
        max_iters: 3_000,
        init: Some(init),
        ..SolverConfig::default()
    };
    let tr = batch_solve(&model, &tree, &cfg).unwrap();
    for w in tr.records.windows(2) {
        assert!(
            w[1].objective <= w[0].objective + 1e-12,
            "{} -> {}",
            w[0].objective,
            w[1].objective
        );
    }
}

#[test]
fn batch_runs_are_bitwise_repeatable() {
    let model = desk();
    let tree = TiltTree::flat(-1.0, 200).unwrap();
    let cfg = SolverConfig {
        step_size: 0.05,
        max_iters: 2_000,
        ..SolverConfig::default()
    };
    let a = batch_solve(&model, &tree, &cfg).unwrap();
    let b = batch_solve(&model, &tree, &cfg).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.records, b.records);
}

#[test]
fn stochastic_runs_depend_only_on_the_seed() {
    let ds = generate(&logistic_desk_spec()).unwrap();
    let model = ds.model(LossKind::Logistic).unwrap();
    let tree = TiltTree::new(vec![1.0, 0.5], &ds.class_paths().unwrap()).unwrap();
    let cfg = |seed| SolverConfig {
        step_size: 0.01,
        max_iters: 500,
        minibatch_size: 10,
        seed,
        ..SolverConfig::default()
    };
    let a = stochastic_solve(&model, &tree, &cfg(3)).unwrap();
    let b = stochastic_solve(&model, &tree, &cfg(3)).unwrap();
    let c = stochastic_solve(&model, &tree, &cfg(4)).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_ne!(a.theta, c.theta);
}

#[test]
fn large_tilts_reach_the_max_and_min_loss_solutions() {
    let model = SampleModel::location(&[0.0, 1.0, 4.0]).unwrap();
    let bx = GridBox {
        lower: vec![-1.0],
        upper: vec![5.0],
        resolution: 1e-3,
    };
    let pos = batch_solve(
        &model,
        &TiltTree::flat(50.0, 3).unwrap(),
        &SolverConfig {
            step_size: 1e-3,
            max_iters: 100_000,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    assert_eq!(pos.termination, Termination::Converged);
    assert!((pos.theta[0] - 2.0).abs() < 1e-3, "{:?}", pos.theta);
    let neg = batch_solve(
        &model,
        &TiltTree::flat(-50.0, 3).unwrap(),
        &SolverConfig {
            step_size: 0.1,
            max_iters: 20_000,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    assert!((neg.theta[0] - 1.0).abs() < 1e-3, "{:?}", neg.theta);
    // sitting on the middle sample leaves only the far one above 3.9
    assert!((q_zero_grid_oracle(&model, 3.9, &bx).unwrap() - 1.0 / 3.0).abs() < 1e-12);
}
