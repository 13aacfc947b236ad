//! Subcommand bodies. Each returns the report and the files to write next to it.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use term_core::analysis::{check_properties, loss_stats, tradeoff_sweep};
use term_core::experiments::{self as ex, ExperimentOutput, EXPERIMENTS};
use term_core::losses::orthonormality_error;
use term_core::superquantile::{
    default_t_grid, q_zero_grid_oracle_many, ChainConfig, ChainSolutions, GridBox,
    SuperquantileReport,
};
use term_core::{
    batch_solve, stochastic_solve, tree_tilted_objective, LossKind, LossVector, SolverTrace,
    TermError, Tilt,
};

use crate::config::{overlay_experiment, RunConfig};
use crate::source::{self, Source};
use crate::RunArgs;

pub type Artifacts = Vec<(String, Vec<u8>)>;

pub struct Outcome {
    pub report: Value,
    pub artifacts: Artifacts,
    /// Set when part of the run failed numerically; outputs are still written.
    pub partial_failure: Option<String>,
}

/// Tilts offered for positive-t selection.
const POSITIVE_T_GRID: [f64; 8] = [0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 200.0];

fn input(msg: impl Into<String>) -> TermError {
    TermError::Input(msg.into())
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn trace_csv(trace: &SolverTrace) -> Result<Vec<u8>, TermError> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(buf)
}

fn schedule(trace: &SolverTrace, targets: &[f64]) -> Value {
    json!({
        "targets": targets,
        "ramp_iters": trace.ramp_iters,
        "final_tilts": trace.records.last().map(|r| r.tilts.clone()),
    })
}

fn fit_metrics(src: &Source, theta: &[f64]) -> Result<Value, TermError> {
    let mut m = json!({});
    if let LossKind::PcaReconstruction { rank } = src.kind {
        let d = theta.len() / rank;
        m["orthonormality_error"] = json!(orthonormality_error(theta, d, rank));
    }
    let Some(ds) = &src.dataset else { return Ok(m) };
    match src.kind {
        LossKind::Logistic => {
            m["train_accuracy"] = to_json(&ex::class_metrics(theta, ds));
            if let Some(labels) = &ds.groups {
                let mut order: Vec<&String> = Vec::new();
                for l in labels {
                    if !order.contains(&l) {
                        order.push(l);
                    }
                }
                let mut per_group = serde_json::Map::new();
                for g in order {
                    let idx: Vec<usize> = (0..ds.len()).filter(|&i| &labels[i] == g).collect();
                    let acc = ex::class_metrics(theta, &ds.subset(&idx)?).overall;
                    per_group.insert(g.clone(), json!(acc));
                }
                m["group_accuracy"] = Value::Object(per_group);
            }
        }
        LossKind::Squared => m["train_rmse"] = json!(ex::rmse(theta, ds)),
        _ => {}
    }
    Ok(m)
}

pub fn solve(args: &RunArgs) -> Result<Outcome, TermError> {
    let cfg = RunConfig::resolve(args)?;
    let src = source::load(&cfg)?;
    let levels = cfg.levels();
    let tree = src.tree(&levels)?;
    let solver = cfg.solver(src.default_step)?;
    let stochastic = cfg.stochastic.unwrap_or(false);
    let trace = if stochastic {
        stochastic_solve(src.model.as_ref(), &tree, &solver)?
    } else {
        batch_solve(src.model.as_ref(), &tree, &solver)?
    };
    let losses = LossVector::new(src.model.losses(&trace.theta)?)?;
    let metrics = json!({
        "theta": trace.theta,
        "tilted_objective": tree_tilted_objective(&tree, &losses)?,
        "iterations": trace.iterations(),
        "termination": trace.termination,
        "loss_stats": loss_stats(&losses, Tilt::new(levels[0])?),
        "fit": fit_metrics(&src, &trace.theta)?,
    });
    let report = json!({
        "command": "solve",
        "config": cfg,
        "data": src.describe,
        "loss": src.kind.to_string(),
        "solver": solver,
        "method": if stochastic { "stochastic" } else { "batch" },
        "schedule": schedule(&trace, &levels),
        "metrics": metrics,
    });
    Ok(Outcome {
        report,
        artifacts: vec![("trace.csv".into(), trace_csv(&trace)?)],
        partial_failure: None,
    })
}

pub fn sweep(args: &RunArgs) -> Result<Outcome, TermError> {
    let cfg = RunConfig::resolve(args)?;
    if cfg.tau.is_some() || cfg.levels.is_some() || cfg.t.is_some() {
        return Err(input(
            "sweep tilts a single level over --t-grid; --t, --tau and levels do not apply",
        ));
    }
    if cfg.stochastic == Some(true) {
        return Err(input("sweep uses the batch solver"));
    }
    let src = source::load(&cfg)?;
    let grid = cfg
        .t_grid
        .clone()
        .unwrap_or_else(|| POSITIVE_T_GRID.to_vec());
    let taus = cfg.entropy_taus.clone().unwrap_or_else(|| vec![-1.0, 1.0]);
    // the curvature of the tilted objective grows roughly linearly in |t|
    let t_scale = grid.iter().fold(1.0f64, |m, t| m.max(t.abs()));
    let mut solver_cfg = cfg.clone();
    solver_cfg.max_iters = cfg.max_iters.or(Some(100_000));
    let solver = solver_cfg.solver(src.default_step / t_scale)?;
    let result = tradeoff_sweep(src.model.as_ref(), &grid, &solver, &taus)?;
    let checks = check_properties(&result, cfg.rel_slack.unwrap_or(1e-4));
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    let failed: Vec<String> = result
        .points
        .iter()
        .zip(&grid)
        .filter_map(|(p, t)| p.as_ref().err().map(|e| format!("t={t}: {e}")))
        .collect();
    let report = json!({
        "command": "sweep",
        "config": cfg,
        "data": src.describe,
        "loss": src.kind.to_string(),
        "solver": solver,
        "schedule": grid.iter().map(|&t| json!({
            "targets": [t],
            "ramp_iters": solver.ramp_length(&[t]),
        })).collect::<Vec<_>>(),
        "metrics": {
            "points": result.points.iter().map(|p| match p {
                Ok(p) => json!({
                    "t": p.t, "iterations": p.iterations, "converged": p.converged,
                    "stats": p.stats, "tilted_objective": p.tilted_objective, "entropies": p.entropies,
                }),
                Err(e) => json!({ "error": e }),
            }).collect::<Vec<_>>(),
            "properties": checks,
        },
    });
    Ok(Outcome {
        report,
        artifacts: vec![("sweep.csv".into(), csv)],
        partial_failure: (!failed.is_empty()).then(|| failed.join("; ")),
    })
}

fn chain_csv(rows: &[SuperquantileReport]) -> Vec<u8> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    let mut out = String::from("a,verdict,q0,q1,q2,q3,t_tilde\n");
    for r in rows {
        let verdict = serde_json::to_value(r.verdict)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:.16e},{verdict},{},{},{},{},{}\n",
            r.a,
            opt(r.q0),
            opt(r.q1),
            opt(r.q2),
            opt(r.q3),
            opt(r.t_tilde)
        ));
    }
    out.into_bytes()
}

pub fn superquantile(args: &RunArgs) -> Result<Outcome, TermError> {
    let cfg = RunConfig::resolve(args)?;
    if cfg.tau.is_some() || cfg.levels.is_some() || cfg.t.is_some() {
        return Err(input(
            "superquantile searches its own tilt grid; --t, --tau and levels do not apply",
        ));
    }
    let src = source::load(&cfg)?;
    let mut solver_cfg = cfg.clone();
    solver_cfg.max_iters = cfg.max_iters.or(Some(100_000));
    // large tilts need a much smaller step than the plain solve
    let solver = solver_cfg.solver(src.default_step / 100.0)?;
    let chain_cfg = ChainConfig {
        t_grid: cfg.t_grid.clone().unwrap_or_else(default_t_grid),
        t_max: cfg.t_max.unwrap_or(100.0),
        solver: solver.clone(),
        oracle: None,
    };
    let sol = ChainSolutions::solve(src.model.as_ref(), &chain_cfg)?;
    let thresholds = match &cfg.a {
        Some(a) => a.clone(),
        None => (1..20)
            .map(|k| sol.f_min + (sol.f_max - sol.f_min) * k as f64 / 20.0)
            .collect(),
    };
    let oracle = src.oracle_box.as_ref().map(|(lo, hi)| GridBox {
        lower: lo.clone(),
        upper: hi.clone(),
        resolution: cfg
            .oracle_resolution
            .unwrap_or(if lo.len() == 1 { 1e-3 } else { 1e-2 }),
    });
    let inside: Vec<f64> = thresholds
        .iter()
        .copied()
        .filter(|&a| a > sol.f_min && a <= sol.f_max)
        .collect();
    let q0s = match &oracle {
        Some(b) if !inside.is_empty() => q_zero_grid_oracle_many(src.model.as_ref(), &inside, b)?,
        _ => Vec::new(),
    };
    let rows: Vec<SuperquantileReport> = thresholds
        .iter()
        .map(|&a| {
            let q0 = inside
                .iter()
                .position(|&x| x == a)
                .and_then(|k| q0s.get(k).copied());
            sol.chain_at(a, q0)
        })
        .collect();
    let report = json!({
        "command": "superquantile",
        "config": cfg,
        "data": src.describe,
        "loss": src.kind.to_string(),
        "solver": solver,
        "schedule": {
            "t_grid": chain_cfg.t_grid,
            "t_max": chain_cfg.t_max,
            "ramp_iters_for_negative_t": solver.ramp_length(&[-1.0]),
        },
        "oracle": oracle,
        "metrics": {
            "f_min": sol.f_min,
            "f_max": sol.f_max,
            "chain": rows,
        },
    });
    Ok(Outcome {
        report,
        artifacts: vec![("chain.csv".into(), chain_csv(&rows))],
        partial_failure: None,
    })
}

fn file_name(trace: &str) -> String {
    let clean: String = trace
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("trace-{clean}.csv")
}

fn recipe<C, R>(
    name: &str,
    args: &RunArgs,
    run: fn(&C) -> term_core::Result<ExperimentOutput<R>>,
) -> Result<Outcome, TermError>
where
    C: Default + Serialize + DeserializeOwned,
    R: Serialize,
{
    let merged = overlay_experiment(to_json(&C::default()), name, args)?;
    let cfg: C =
        serde_json::from_value(merged).map_err(|e| input(format!("experiment {name}: {e}")))?;
    let out = run(&cfg)?;
    let mut artifacts = Vec::new();
    let mut schedules = serde_json::Map::new();
    for (trace_name, trace) in &out.traces {
        let targets = trace
            .records
            .last()
            .map(|r| r.tilts.clone())
            .unwrap_or_default();
        schedules.insert(trace_name.clone(), schedule(trace, &targets));
        artifacts.push((file_name(trace_name), trace_csv(trace)?));
    }
    let report = json!({
        "command": "experiment",
        "experiment": name,
        "config": to_json(&cfg),
        "schedule": schedules,
        "metrics": to_json(&out.report),
    });
    Ok(Outcome {
        report,
        artifacts,
        partial_failure: None,
    })
}

pub fn experiment(name: &str, args: &RunArgs) -> Result<Outcome, TermError> {
    match name {
        "point-estimation" => recipe(name, args, ex::point_estimation),
        "robust-regression" => recipe(name, args, ex::robust_regression),
        "class-imbalance" => recipe(name, args, ex::class_imbalance),
        "annotators" => recipe(name, args, ex::annotators),
        "fair-pca" => recipe(name, args, ex::fair_pca),
        "hierarchical" => recipe(name, args, ex::hierarchical),
        other => Err(input(format!(
            "unknown experiment '{other}' (available: {})",
            EXPERIMENTS.join(", ")
        ))),
    }
}
