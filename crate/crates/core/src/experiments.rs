//! Desk-scale experiment recipes shared by the CLI and the acceptance suite.
//!
//! Each recipe is a pure function of its config (seed included) and returns a
//! serializable report plus the solver traces it produced.

use serde::{Deserialize, Serialize};

use crate::data::{generate, held_out, inject_label_flip, Scenario, ScenarioSpec, TabularDataset};
use crate::error::{Result, TermError};
use crate::hierarchy::TiltTree;
use crate::losses::LossKind;
use crate::model::{LossModel, PcaModel};
use crate::solver::{batch_solve, SolverConfig, SolverTrace};

/// Seed of the logistic desk instance.
pub const DESK_SEED: u64 = 7;

/// Balanced two-class logistic instance: 100 + 100 points around `+-(1, 1)`.
pub fn logistic_desk_spec() -> ScenarioSpec {
    ScenarioSpec::new(Scenario::logistic(100, 100, 2, 1.0), 0.0, DESK_SEED)
}

/// Target tilts and the continuation ramp actually applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltSchedule {
    pub targets: Vec<f64>,
    pub ramp_iters: Option<usize>,
}

impl TiltSchedule {
    fn of(trace: &SolverTrace, targets: &[f64]) -> Self {
        TiltSchedule {
            targets: targets.to_vec(),
            ramp_iters: trace.ramp_iters,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput<R> {
    pub report: R,
    /// Named traces, e.g. `("erm", trace)`.
    pub traces: Vec<(String, SolverTrace)>,
}

fn solve(model: &dyn LossModel, tree: &TiltTree, cfg: &SolverConfig) -> Result<SolverTrace> {
    batch_solve(model, tree, cfg)
}

fn score(theta: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for (w, xj) in theta.iter().zip(x) {
        s += w * xj;
    }
    s + theta[x.len()]
}

/// Root mean squared error of the affine predictor.
pub fn rmse(theta: &[f64], ds: &TabularDataset) -> f64 {
    let se: f64 = ds
        .features
        .iter()
        .zip(&ds.targets)
        .map(|(x, y)| (score(theta, x) - y).powi(2))
        .sum();
    (se / ds.len() as f64).sqrt()
}

/// Accuracies in percent; the rare class is label `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub overall: f64,
    pub rare: f64,
    pub common: f64,
}

pub fn class_metrics(theta: &[f64], ds: &TabularDataset) -> ClassMetrics {
    let (mut hit, mut pos, mut pos_hit, mut neg, mut neg_hit) =
        (0usize, 0usize, 0usize, 0usize, 0usize);
    for (x, y) in ds.features.iter().zip(&ds.targets) {
        let pred = if score(theta, x) >= 0.0 { 1.0 } else { -1.0 };
        let ok = pred == *y;
        hit += ok as usize;
        if *y > 0.0 {
            pos += 1;
            pos_hit += ok as usize;
        } else {
            neg += 1;
            neg_hit += ok as usize;
        }
    }
    let pct = |a: usize, b: usize| {
        if b == 0 {
            f64::NAN
        } else {
            100.0 * a as f64 / b as f64
        }
    };
    ClassMetrics {
        overall: pct(hit, ds.len()),
        rare: pct(pos_hit, pos),
        common: pct(neg_hit, neg),
    }
}

// ---------------------------------------------------------------- point estimation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointEstimationConfig {
    pub n: usize,
    pub noise_fraction: f64,
    pub t: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for PointEstimationConfig {
    fn default() -> Self {
        PointEstimationConfig {
            n: 100,
            noise_fraction: 0.2,
            t: 0.0,
            seed: 1,
            solver: SolverConfig {
                step_size: 0.02,
                max_iters: 50_000,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimationReport {
    pub estimate: Vec<f64>,
    pub sample_mean: Vec<f64>,
    pub clean_mean: Vec<f64>,
    pub center: [f64; 2],
    pub distance_to_center: f64,
    pub outliers: usize,
    pub iterations: usize,
    pub converged: bool,
    pub schedule: TiltSchedule,
}

fn column_mean(rows: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for &i in idx {
        for (mk, v) in m.iter_mut().zip(&rows[i]) {
            *mk += v;
        }
    }
    m.iter().map(|v| v / idx.len() as f64).collect()
}

pub fn point_estimation(
    cfg: &PointEstimationConfig,
) -> Result<ExperimentOutput<PointEstimationReport>> {
    let spec = ScenarioSpec::new(
        Scenario::point_estimation(cfg.n),
        cfg.noise_fraction,
        cfg.seed,
    );
    let ds = generate(&spec)?;
    let center = match spec.scenario {
        Scenario::PointEstimation2D { center, .. } => center,
        _ => unreachable!(),
    };
    let model = ds.model(LossKind::SquaredDistance)?;
    let tree = TiltTree::flat(cfg.t, ds.len())?;
    let tr = solve(&model, &tree, &cfg.solver)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let clean = ds.clean_indices();
    let est = tr.theta.clone();
    let dist = ((est[0] - center[0]).powi(2) + (est[1] - center[1]).powi(2)).sqrt();
    let report = PointEstimationReport {
        sample_mean: column_mean(&ds.features, &all),
        clean_mean: column_mean(&ds.features, &clean),
        estimate: est,
        center,
        distance_to_center: dist,
        outliers: ds.provenance.noisy.len(),
        iterations: tr.iterations(),
        converged: tr.termination == crate::solver::Termination::Converged,
        schedule: TiltSchedule::of(&tr, &[cfg.t]),
    };
    Ok(ExperimentOutput {
        report,
        traces: vec![("term".into(), tr)],
    })
}

// ---------------------------------------------------------------- robust regression

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustRegressionConfig {
    pub n: usize,
    pub dim: usize,
    pub n_test: usize,
    pub noise_fraction: f64,
    /// Read the outlier scale 5 as a variance instead of a standard deviation.
    pub outlier_scale_is_variance: bool,
    pub t: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for RobustRegressionConfig {
    fn default() -> Self {
        RobustRegressionConfig {
            n: 200,
            dim: 5,
            n_test: 1000,
            noise_fraction: 0.4,
            outlier_scale_is_variance: false,
            t: -2.0,
            seed: 1,
            solver: SolverConfig {
                step_size: 0.05,
                max_iters: 20_000,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRegressionReport {
    pub erm_rmse: f64,
    pub term_rmse: f64,
    pub genie_rmse: f64,
    pub noisy_samples: usize,
    pub term_iterations: usize,
    pub schedule: TiltSchedule,
}

pub fn robust_regression(
    cfg: &RobustRegressionConfig,
) -> Result<ExperimentOutput<RobustRegressionReport>> {
    let sc = Scenario::LinearRegression {
        n: cfg.n,
        dim: cfg.dim,
        noise_std: 1.0,
        outlier_mean: 5.0,
        outlier_scale: 5.0,
        scale_is_variance: cfg.outlier_scale_is_variance,
    };
    let spec = ScenarioSpec::new(sc, cfg.noise_fraction, cfg.seed);
    let train = generate(&spec)?;
    let test = held_out(&spec, cfg.n_test)?;
    let genie = train.genie_split()?;

    let model = train.model(LossKind::Squared)?;
    let erm = solve(&model, &TiltTree::flat(0.0, train.len())?, &cfg.solver)?;
    let term = solve(&model, &TiltTree::flat(cfg.t, train.len())?, &cfg.solver)?;
    let gm = genie.model(LossKind::Squared)?;
    let gtr = solve(&gm, &TiltTree::flat(0.0, genie.len())?, &cfg.solver)?;

    let report = RobustRegressionReport {
        erm_rmse: rmse(&erm.theta, &test),
        term_rmse: rmse(&term.theta, &test),
        genie_rmse: rmse(&gtr.theta, &test),
        noisy_samples: train.provenance.noisy.len(),
        term_iterations: term.iterations(),
        schedule: TiltSchedule::of(&term, &[cfg.t]),
    };
    Ok(ExperimentOutput {
        report,
        traces: vec![
            ("erm".into(), erm),
            ("term".into(), term),
            ("genie".into(), gtr),
        ],
    })
}

// ---------------------------------------------------------------- class imbalance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassImbalanceConfig {
    pub n_rare: usize,
    pub n_common: usize,
    pub separation: f64,
    pub n_test: usize,
    /// Class-level tilt.
    pub t: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for ClassImbalanceConfig {
    fn default() -> Self {
        ClassImbalanceConfig {
            n_rare: 20,
            n_common: 400,
            separation: 1.25,
            n_test: 10_500,
            t: 50.0,
            seed: 1,
            solver: SolverConfig {
                step_size: 0.5,
                max_iters: 40_000,
                grad_tol: 1e-7,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassImbalanceReport {
    pub erm: ClassMetrics,
    pub term: ClassMetrics,
    pub erm_converged: bool,
    pub term_converged: bool,
    pub schedule: TiltSchedule,
}

fn class_tree(ds: &TabularDataset, levels: &[f64]) -> Result<TiltTree> {
    TiltTree::new(levels.to_vec(), &ds.class_paths()?)
}

pub fn class_imbalance(
    cfg: &ClassImbalanceConfig,
) -> Result<ExperimentOutput<ClassImbalanceReport>> {
    let spec = ScenarioSpec::new(
        Scenario::logistic(cfg.n_rare, cfg.n_common, 2, cfg.separation),
        0.0,
        cfg.seed,
    );
    let train = generate(&spec)?;
    let test = held_out(&spec, cfg.n_test)?;
    let model = train.model(LossKind::Logistic)?;
    let erm = solve(&model, &TiltTree::flat(0.0, train.len())?, &cfg.solver)?;
    let levels = [cfg.t, 0.0];
    let term = solve(&model, &class_tree(&train, &levels)?, &cfg.solver)?;
    let converged = |t: &SolverTrace| t.termination == crate::solver::Termination::Converged;
    let report = ClassImbalanceReport {
        erm: class_metrics(&erm.theta, &test),
        term: class_metrics(&term.theta, &test),
        erm_converged: converged(&erm),
        term_converged: converged(&term),
        schedule: TiltSchedule::of(&term, &levels),
    };
    Ok(ExperimentOutput {
        report,
        traces: vec![("erm".into(), erm), ("term".into(), term)],
    })
}

// ---------------------------------------------------------------- noisy annotators

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorsConfig {
    pub items: usize,
    pub hammers: usize,
    pub spammers: usize,
    pub n_test: usize,
    /// Annotator-level tilt.
    pub t: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for AnnotatorsConfig {
    fn default() -> Self {
        AnnotatorsConfig {
            items: 200,
            hammers: 2,
            spammers: 8,
            n_test: 2000,
            t: -2.0,
            seed: 1,
            solver: SolverConfig {
                step_size: 0.1,
                max_iters: 20_000,
                grad_tol: 1e-7,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorsReport {
    pub erm_accuracy: f64,
    pub term_accuracy: f64,
    pub genie_accuracy: f64,
    /// Annotator weights at the TERM solution, in annotator order.
    pub annotator_weights: Vec<f64>,
    pub schedule: TiltSchedule,
}

pub fn annotators(cfg: &AnnotatorsConfig) -> Result<ExperimentOutput<AnnotatorsReport>> {
    let spec = ScenarioSpec::new(
        Scenario::annotators(cfg.items, cfg.hammers, cfg.spammers),
        0.0,
        cfg.seed,
    );
    let train = generate(&spec)?;
    let test = held_out(&spec, cfg.n_test)?;
    let genie = train.genie_split()?;
    let model = train.model(LossKind::Logistic)?;
    let erm = solve(&model, &TiltTree::flat(0.0, train.len())?, &cfg.solver)?;
    let levels = [cfg.t, 0.0];
    let tree = train.tilt_tree(&levels)?;
    let term = solve(&model, &tree, &cfg.solver)?;
    let gm = genie.model(LossKind::Logistic)?;
    let gtr = solve(&gm, &TiltTree::flat(0.0, genie.len())?, &cfg.solver)?;
    let losses = crate::tilt::LossVector::new(model.losses(&term.theta)?)?;
    let weights = crate::hierarchy::tree_tilted_weights(&tree, &losses)?;
    let report = AnnotatorsReport {
        erm_accuracy: class_metrics(&erm.theta, &test).overall,
        term_accuracy: class_metrics(&term.theta, &test).overall,
        genie_accuracy: class_metrics(&gtr.theta, &test).overall,
        annotator_weights: weights.group,
        schedule: TiltSchedule::of(&term, &levels),
    };
    Ok(ExperimentOutput {
        report,
        traces: vec![
            ("erm".into(), erm),
            ("term".into(), term),
            ("genie".into(), gtr),
        ],
    })
}

// ---------------------------------------------------------------- fair PCA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairPcaConfig {
    pub n_a: usize,
    pub n_b: usize,
    pub dim: usize,
    pub rank: usize,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for FairPcaConfig {
    fn default() -> Self {
        FairPcaConfig {
            n_a: 200,
            n_b: 50,
            dim: 5,
            rank: 2,
            t_grid: vec![0.0, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 200.0],
            seed: 1,
            solver: SolverConfig {
                step_size: 0.002,
                max_iters: 5_000,
                grad_tol: 1e-7,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairPcaPoint {
    pub t: f64,
    pub group_losses: Vec<f64>,
    pub max_loss: f64,
    pub avg_loss: f64,
    pub orthonormality_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairPcaReport {
    pub points: Vec<FairPcaPoint>,
}

pub fn fair_pca(cfg: &FairPcaConfig) -> Result<ExperimentOutput<FairPcaReport>> {
    let spec = ScenarioSpec::new(Scenario::fair_pca(cfg.n_a, cfg.n_b, cfg.dim), 0.0, cfg.seed);
    let ds = generate(&spec)?;
    let labels = ds
        .groups
        .as_ref()
        .ok_or_else(|| TermError::input("fair PCA data has no groups"))?;
    let mut order: Vec<&str> = Vec::new();
    for l in labels {
        if !order.contains(&l.as_str()) {
            order.push(l);
        }
    }
    let groups: Vec<Vec<Vec<f64>>> = order
        .iter()
        .map(|g| {
            ds.features
                .iter()
                .zip(labels)
                .filter(|(_, l)| l == g)
                .map(|(x, _)| x.clone())
                .collect()
        })
        .collect();
    let model = PcaModel::new(groups, cfg.rank)?;
    let mut points = Vec::new();
    let mut traces = Vec::new();
    for &t in &cfg.t_grid {
        let tr = solve(&model, &TiltTree::flat(t, model.num_units())?, &cfg.solver)?;
        let f = model.losses(&tr.theta)?;
        points.push(FairPcaPoint {
            t,
            max_loss: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            avg_loss: f.iter().sum::<f64>() / f.len() as f64,
            group_losses: f,
            orthonormality_error: crate::losses::orthonormality_error(&tr.theta, cfg.dim, cfg.rank),
        });
        traces.push((format!("t={t}"), tr));
    }
    Ok(ExperimentOutput {
        report: FairPcaReport { points },
        traces,
    })
}

// ---------------------------------------------------------------- hierarchical

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchicalConfig {
    pub n_rare: usize,
    pub n_common: usize,
    pub separation: f64,
    pub flip_fraction: f64,
    pub n_test: usize,
    /// Class-level tilt.
    pub t: f64,
    /// Sample-level tilt.
    pub tau: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        HierarchicalConfig {
            n_rare: 20,
            n_common: 400,
            separation: 1.25,
            flip_fraction: 0.3,
            n_test: 10_500,
            t: 50.0,
            tau: -2.0,
            seed: 1,
            solver: SolverConfig {
                step_size: 0.5,
                max_iters: 40_000,
                grad_tol: 1e-7,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalReport {
    pub erm: ClassMetrics,
    pub class_term: ClassMetrics,
    pub sample_term: ClassMetrics,
    pub hierarchical: ClassMetrics,
    pub flipped_samples: usize,
    pub schedule: TiltSchedule,
}

pub fn hierarchical(cfg: &HierarchicalConfig) -> Result<ExperimentOutput<HierarchicalReport>> {
    let spec = ScenarioSpec::new(
        Scenario::logistic(cfg.n_rare, cfg.n_common, 2, cfg.separation),
        0.0,
        cfg.seed,
    );
    let clean = generate(&spec)?;
    let train = inject_label_flip(&clean, cfg.flip_fraction, cfg.seed.wrapping_add(1))?;
    let test = held_out(&spec, cfg.n_test)?;
    let model = train.model(LossKind::Logistic)?;
    let n = train.len();
    let erm = solve(&model, &TiltTree::flat(0.0, n)?, &cfg.solver)?;
    let class_t = solve(&model, &class_tree(&train, &[cfg.t, 0.0])?, &cfg.solver)?;
    let sample_t = solve(&model, &TiltTree::flat(cfg.tau, n)?, &cfg.solver)?;
    let levels = [cfg.t, cfg.tau];
    let hier = solve(&model, &class_tree(&train, &levels)?, &cfg.solver)?;
    let report = HierarchicalReport {
        erm: class_metrics(&erm.theta, &test),
        class_term: class_metrics(&class_t.theta, &test),
        sample_term: class_metrics(&sample_t.theta, &test),
        hierarchical: class_metrics(&hier.theta, &test),
        flipped_samples: train.provenance.flipped.len(),
        schedule: TiltSchedule::of(&hier, &levels),
    };
    Ok(ExperimentOutput {
        report,
        traces: vec![
            ("erm".into(), erm),
            ("class-term".into(), class_t),
            ("sample-term".into(), sample_t),
            ("hierarchical".into(), hier),
        ],
    })
}

/// Names accepted by the CLI `experiment` command.
pub const EXPERIMENTS: [&str; 6] = [
    "point-estimation",
    "robust-regression",
    "class-imbalance",
    "annotators",
    "fair-pca",
    "hierarchical",
];
