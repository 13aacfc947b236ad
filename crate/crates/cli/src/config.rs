//! Flat key-value run configuration and its merge with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use term_core::solver::Continuation;
use term_core::{SolverConfig, TermError};

use crate::RunArgs;

fn input(msg: impl Into<String>) -> TermError {
    TermError::Input(msg.into())
}

/// Everything `solve`, `sweep` and `superquantile` read from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<String>,
    pub csv: Option<PathBuf>,
    pub target: Option<String>,
    pub group: Option<String>,
    pub supergroup: Option<String>,
    pub classification: Option<bool>,
    pub loss: Option<String>,
    pub n: Option<usize>,
    pub dim: Option<usize>,
    pub noise: Option<f64>,
    pub seed: Option<u64>,
    pub t: Option<f64>,
    pub tau: Option<f64>,
    /// Full list of tree tilts, outermost first; overrides `t` and `tau`.
    pub levels: Option<Vec<f64>>,
    pub t_grid: Option<Vec<f64>>,
    pub a: Option<Vec<f64>>,
    pub entropy_taus: Option<Vec<f64>>,
    pub rel_slack: Option<f64>,
    pub t_max: Option<f64>,
    pub oracle_resolution: Option<f64>,
    pub stochastic: Option<bool>,
    pub step_size: Option<f64>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    /// `auto`, `off`, or a ramp length via `ramp_iters`.
    pub continuation: Option<String>,
    pub ramp_iters: Option<usize>,
    pub minibatch_size: Option<usize>,
    pub smoothing: Option<f64>,
    pub snapshot_every: Option<usize>,
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, TermError> {
    s.split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| input(format!("'{p}' is not a finite number")))
        })
        .collect()
}

pub fn read_table(path: &Path) -> Result<toml::Table, TermError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| input(format!("config {}: {e}", path.display())))?;
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(input(format!("config must be flat; '{k}' is a table")));
    }
    Ok(table)
}

impl RunConfig {
    /// Config file entries overridden by any flag that was given.
    pub fn resolve(args: &RunArgs) -> Result<Self, TermError> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::deserialize(toml::Value::Table(read_table(p)?))
                .map_err(|e| input(format!("config {}: {e}", p.display())))?,
            None => RunConfig::default(),
        };
        if let Some(dir) = args.config.as_ref().and_then(|p| p.parent()) {
            // relative CSV paths in a config file are relative to the file
            if let Some(csv) = cfg.csv.as_mut().filter(|c| c.is_relative()) {
                *csv = dir.join(&*csv);
            }
        }
        if args.csv.is_some() {
            cfg.csv = args.csv.clone();
        }
        if args.scenario.is_some() {
            cfg.scenario = args.scenario.clone();
        }
        if cfg.csv.is_some() && cfg.scenario.is_some() {
            return Err(input("give either a CSV file or a scenario, not both"));
        }
        if args.loss.is_some() {
            cfg.loss = args.loss.clone();
        }
        if args.t.is_some() {
            cfg.t = args.t;
        }
        if args.tau.is_some() {
            cfg.tau = args.tau;
        }
        if let Some(g) = &args.t_grid {
            cfg.t_grid = Some(parse_list(g)?);
        }
        if let Some(a) = &args.a {
            cfg.a = Some(parse_list(a)?);
        }
        if args.seed.is_some() {
            cfg.seed = args.seed;
        }
        if args.noise.is_some() {
            cfg.noise = args.noise;
        }
        if args.stochastic {
            cfg.stochastic = Some(true);
        }
        if cfg.levels.is_some() && (cfg.t.is_some() || cfg.tau.is_some()) {
            return Err(input("give either levels or t/tau, not both"));
        }
        Ok(cfg)
    }

    pub fn levels(&self) -> Vec<f64> {
        if let Some(l) = &self.levels {
            return l.clone();
        }
        let t = self.t.unwrap_or(0.0);
        match self.tau {
            Some(tau) => vec![t, tau],
            None => vec![t],
        }
    }

    pub fn solver(&self, default_step: f64) -> Result<SolverConfig, TermError> {
        let d = SolverConfig::default();
        let continuation = match (self.continuation.as_deref(), self.ramp_iters) {
            (None | Some("auto"), None) => Continuation::Auto,
            (None | Some("linear"), Some(k)) => Continuation::Linear { ramp_iters: k },
            (Some("off"), None) => Continuation::Off,
            (Some(other), _) => {
                return Err(input(format!(
                    "continuation '{other}' conflicts with ramp_iters or is unknown (auto, off, linear)"
                )))
            }
        };
        let cfg = SolverConfig {
            step_size: self.step_size.unwrap_or(default_step),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            continuation,
            minibatch_size: self.minibatch_size.unwrap_or(d.minibatch_size),
            smoothing: self.smoothing.unwrap_or(d.smoothing),
            seed: self.seed.unwrap_or(d.seed),
            snapshot_every: self.snapshot_every.unwrap_or(0),
            init: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

const SOLVER_KEYS: [&str; 6] = [
    "step_size",
    "max_iters",
    "grad_tol",
    "minibatch_size",
    "smoothing",
    "snapshot_every",
];

fn set_field(
    obj: &mut Value,
    key: &str,
    value: Value,
    experiment: &str,
    origin: &str,
) -> Result<(), TermError> {
    let map = obj
        .as_object_mut()
        .expect("recipe configs serialize to objects");
    if map.contains_key(key) {
        map.insert(key.to_string(), value);
        return Ok(());
    }
    if SOLVER_KEYS.contains(&key) {
        map.get_mut("solver")
            .and_then(Value::as_object_mut)
            .expect("recipe configs carry a solver")
            .insert(key.to_string(), value);
        return Ok(());
    }
    if key == "ramp_iters" {
        if let Some(solver) = map.get_mut("solver").and_then(Value::as_object_mut) {
            solver.insert(
                "continuation".into(),
                serde_json::json!({ "mode": "linear", "ramp_iters": value }),
            );
        }
        return Ok(());
    }
    let mut valid: Vec<&str> = map
        .keys()
        .filter(|k| *k != "solver")
        .map(String::as_str)
        .collect();
    valid.extend(SOLVER_KEYS);
    valid.push("ramp_iters");
    Err(input(format!(
        "{origin} '{key}' does not apply to experiment {experiment} (accepted: {})",
        valid.join(", ")
    )))
}

/// Name of the field the `--noise` flag drives for a recipe.
fn noise_key(obj: &Value) -> &'static str {
    if obj.get("flip_fraction").is_some() {
        "flip_fraction"
    } else {
        "noise_fraction"
    }
}

/// Start from a recipe's defaults, apply the config file, then the flags.
pub fn overlay_experiment(
    defaults: Value,
    experiment: &str,
    args: &RunArgs,
) -> Result<Value, TermError> {
    let mut obj = defaults;
    if args.csv.is_some()
        || args.scenario.is_some()
        || args.loss.is_some()
        || args.a.is_some()
        || args.stochastic
    {
        return Err(input(format!(
            "experiment {experiment} generates its own data; --csv, --scenario, --loss, --a and --stochastic do not apply"
        )));
    }
    if let Some(p) = &args.config {
        for (k, v) in read_table(p)? {
            let key = if k == "noise" {
                noise_key(&obj).to_string()
            } else {
                k
            };
            let v = serde_json::to_value(v).map_err(|e| input(e.to_string()))?;
            set_field(&mut obj, &key, v, experiment, "config key")?;
        }
    }
    let flags: [(&str, Option<Value>); 4] = [
        ("t", args.t.map(Value::from)),
        ("tau", args.tau.map(Value::from)),
        ("seed", args.seed.map(Value::from)),
        (noise_key(&obj), args.noise.map(Value::from)),
    ];
    for (key, v) in flags {
        if let Some(v) = v {
            let flag = if key.ends_with("fraction") {
                "noise"
            } else {
                key
            };
            set_field(&mut obj, key, v, experiment, &format!("flag --{flag} sets"))?;
        }
    }
    if let Some(g) = &args.t_grid {
        set_field(
            &mut obj,
            "t_grid",
            serde_json::json!(parse_list(g)?),
            experiment,
            "flag --t-grid sets",
        )?;
    }
    Ok(obj)
}
