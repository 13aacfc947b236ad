//! First-order solvers for (hierarchical) tilted risk.
//!
//! [`batch_solve`] runs full gradient descent on a tilt tree. [`stochastic_solve`]
//! samples a group by Gumbel-max over `log|g| + t * R_g`, draws a minibatch
//! inside it, keeps a running tilted estimate `R_g` per group and reweights the
//! minibatch gradients by `exp(tau * (f - R_g))`.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TermError};
use crate::hierarchy::TiltTree;
use crate::model::LossModel;
use crate::tilt::{weighted_row_sum, weighted_tilted_value, GradientMatrix};

/// Objective magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Continuation {
    /// Linear ramp over `max_iters / 2` iterations when a target tilt is negative.
    Auto,
    /// Linear ramp over the given number of iterations for negative targets.
    Linear { ramp_iters: usize },
    /// Explicitly waived: negative tilts are used from the first iteration.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub continuation: Continuation,
    pub minibatch_size: usize,
    /// Smoothing of the running tilted estimate, in (0, 1].
    pub smoothing: f64,
    pub seed: u64,
    /// Store an iterate every this many iterations (0 disables snapshots).
    pub snapshot_every: usize,
    pub init: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_size: 0.1,
            max_iters: 10_000,
            grad_tol: 1e-8,
            continuation: Continuation::Auto,
            minibatch_size: 1,
            smoothing: 0.1,
            seed: 0,
            snapshot_every: 0,
            init: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(TermError::input(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(TermError::input("max_iters must be at least 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(TermError::input("grad_tol must be non-negative"));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(TermError::input(format!(
                "smoothing must lie in (0, 1], got {}",
                self.smoothing
            )));
        }
        if let Continuation::Linear { ramp_iters } = self.continuation {
            if ramp_iters == 0 || ramp_iters > self.max_iters {
                return Err(TermError::input(format!(
                    "ramp length {ramp_iters} must lie in 1..={}",
                    self.max_iters
                )));
            }
        }
        Ok(())
    }

    /// Ramp length actually used for the given targets (None means constant tilts).
    pub fn ramp_length(&self, targets: &[f64]) -> Option<usize> {
        if !targets.iter().any(|t| *t < 0.0) {
            return None;
        }
        match self.continuation {
            Continuation::Auto => Some((self.max_iters / 2).max(1)),
            Continuation::Linear { ramp_iters } => Some(ramp_iters),
            Continuation::Off => None,
        }
    }
}

/// Tilt used at each iteration `0..=max_iters`: `t_target * min(i / K, 1)` for a
/// negative target, the constant target otherwise.
pub fn continuation_schedule(t_target: f64, max_iters: usize, ramp_iters: usize) -> Vec<f64> {
    (0..=max_iters)
        .map(|i| ramp_tilt(t_target, i, Some(ramp_iters)))
        .collect()
}

fn ramp_tilt(target: f64, iter: usize, ramp: Option<usize>) -> f64 {
    match ramp {
        Some(k) if target < 0.0 && iter < k => target * (iter as f64 / k as f64),
        _ => target,
    }
}

fn tilts_at(targets: &[f64], iter: usize, ramp: Option<usize>) -> Vec<f64> {
    targets.iter().map(|&t| ramp_tilt(t, iter, ramp)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub tilts: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub theta: Vec<f64>,
    pub termination: Termination,
    pub seed: u64,
    /// Ramp length used, if continuation kicked in.
    pub ramp_iters: Option<usize>,
}

impl SolverTrace {
    /// Number of gradient steps taken.
    pub fn iterations(&self) -> usize {
        match self.termination {
            Termination::Converged => self.records.len() - 1,
            Termination::MaxIters => self.records.len(),
        }
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }

    /// Line-delimited `iter,t[,t_1..],objective,grad_norm` records.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let depth = self.records.first().map(|r| r.tilts.len()).unwrap_or(1);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string(), "t".to_string()];
        header.extend((1..depth).map(|k| format!("t_{k}")));
        header.push("objective".into());
        header.push("grad_norm".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string()];
            row.extend(r.tilts.iter().map(|t| t.to_string()));
            row.push(r.objective.to_string());
            row.push(r.grad_norm.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> TermError {
    TermError::Csv {
        line: e.position().map(|p| p.line()),
        message: e.to_string(),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_model(model: &dyn LossModel, tree: &TiltTree) -> Result<()> {
    if tree.num_samples() != model.num_units() {
        return Err(TermError::input(format!(
            "tilt tree covers {} units, model has {}",
            tree.num_samples(),
            model.num_units()
        )));
    }
    Ok(())
}

fn initial(model: &dyn LossModel, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let theta = match &cfg.init {
        Some(t) => t.clone(),
        None => model.initial_theta(),
    };
    if theta.len() != model.dim() {
        return Err(TermError::input(format!(
            "initial parameter has length {}, model needs {}",
            theta.len(),
            model.dim()
        )));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(TermError::input("initial parameter is not finite"));
    }
    Ok(theta)
}

/// Tree objective and its gradient `sum_i w_i grad_i` at `theta` for explicit tilts.
pub fn tree_objective_and_gradient(
    model: &dyn LossModel,
    tree: &TiltTree,
    tilts: &[f64],
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (losses, grads) = model.eval_all(theta)?;
    if losses.iter().any(|f| !f.is_finite()) {
        return Err(TermError::numerical("non-finite loss"));
    }
    let obj = tree.objective_with(tilts, &losses)?;
    let w = tree.weights_with(tilts, &losses)?;
    Ok((obj, weighted_row_sum(&grads, &w.sample)))
}

fn guard(iter: usize, objective: f64, grad: &[f64], theta: &[f64]) -> Result<()> {
    if !objective.is_finite() || objective.abs() > DIVERGENCE_LIMIT {
        return Err(TermError::Diverged {
            iter,
            objective,
            theta: theta.to_vec(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TermError::numerical(format!(
            "non-finite gradient at iteration {iter}"
        )));
    }
    Ok(())
}

/// Full-gradient descent on the tree objective.
pub fn batch_solve(
    model: &dyn LossModel,
    tree: &TiltTree,
    cfg: &SolverConfig,
) -> Result<SolverTrace> {
    cfg.validate()?;
    check_model(model, tree)?;
    let targets = tree.levels().to_vec();
    let ramp = cfg.ramp_length(&targets);
    let mut theta = initial(model, cfg)?;
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut termination = Termination::MaxIters;

    for iter in 0..cfg.max_iters {
        let tilts = tilts_at(&targets, iter, ramp);
        let (objective, grad) = tree_objective_and_gradient(model, tree, &tilts, &theta)?;
        guard(iter, objective, &grad, &theta)?;
        let grad_norm = norm(&grad);
        let ramped = ramp.is_none_or(|k| iter >= k);
        records.push(IterRecord {
            iter,
            tilts,
            objective,
            grad_norm,
        });
        if cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0 {
            snapshots.push((iter, theta.clone()));
        }
        if ramped && grad_norm < cfg.grad_tol {
            termination = Termination::Converged;
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.step_size * g;
        }
        model.retract(&mut theta)?;
    }

    Ok(SolverTrace {
        records,
        snapshots,
        theta,
        termination,
        seed: cfg.seed,
        ramp_iters: ramp,
    })
}

/// Per-group running tilted-loss estimates, initialized to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningTiltEstimate {
    values: Vec<f64>,
    smoothing: f64,
}

impl RunningTiltEstimate {
    pub fn new(groups: usize, smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0 && smoothing <= 1.0) {
            return Err(TermError::input(format!(
                "smoothing must lie in (0, 1], got {smoothing}"
            )));
        }
        Ok(RunningTiltEstimate {
            values: vec![0.0; groups],
            smoothing,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, g: usize) -> f64 {
        self.values[g]
    }

    /// `R <- (1/tau) log((1 - l) exp(tau R) + l exp(tau R_batch))`; linear
    /// averaging at `tau == 0`, plain replacement at `l == 1`.
    pub fn update(&mut self, g: usize, batch_value: f64, tau: f64) {
        let l = self.smoothing;
        self.values[g] = if l == 1.0 {
            batch_value
        } else {
            weighted_tilted_value(&[self.values[g], batch_value], &[1.0 - l, l], tau)
        };
    }
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    // open interval keeps both logs finite
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Minibatch stochastic solver for a one- or two-level tree. With one level the
/// whole dataset is a single group tilted at that level's tilt.
pub fn stochastic_solve(
    model: &dyn LossModel,
    tree: &TiltTree,
    cfg: &SolverConfig,
) -> Result<SolverTrace> {
    cfg.validate()?;
    check_model(model, tree)?;
    if tree.depth() > 2 {
        return Err(TermError::Unsupported(format!(
            "stochastic solver handles trees of depth 1 or 2, got {}",
            tree.depth()
        )));
    }
    let groups = tree.leaf_groups();
    let b = cfg.minibatch_size;
    let smallest = groups.iter().map(|g| g.len()).min().unwrap_or(0);
    if b == 0 || b > smallest {
        return Err(TermError::input(format!(
            "minibatch size {b} must lie in 1..={smallest} (smallest group)"
        )));
    }
    let n = tree.num_samples() as f64;
    let log_sizes: Vec<f64> = groups.iter().map(|g| (g.len() as f64).ln()).collect();
    let probs: Vec<f64> = groups.iter().map(|g| g.len() as f64 / n).collect();

    let targets = tree.levels().to_vec();
    let ramp = cfg.ramp_length(&targets);
    let mut theta = initial(model, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut est = RunningTiltEstimate::new(groups.len(), cfg.smoothing)?;
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut batch = Vec::with_capacity(b);

    for iter in 0..cfg.max_iters {
        let tilts = tilts_at(&targets, iter, ramp);
        let (t, tau) = if tilts.len() == 2 {
            (tilts[0], tilts[1])
        } else {
            (tilts[0], tilts[0])
        };

        let g = if groups.len() == 1 {
            0
        } else {
            let mut best = (f64::NEG_INFINITY, 0);
            for (k, ls) in log_sizes.iter().enumerate() {
                let key = ls + t * est.get(k) + gumbel(&mut rng);
                if key > best.0 {
                    best = (key, k);
                }
            }
            best.1
        };

        let members = groups[g];
        batch.clear();
        if b == members.len() {
            batch.extend_from_slice(members);
        } else {
            let mut picks = index::sample(&mut rng, members.len(), b).into_vec();
            picks.sort_unstable();
            batch.extend(picks.into_iter().map(|k| members[k]));
        }

        let (losses, grads): (Vec<f64>, GradientMatrix) = model.eval_units(&theta, &batch)?;
        if losses.iter().any(|f| !f.is_finite()) {
            return Err(TermError::numerical(format!(
                "non-finite loss at iteration {iter}"
            )));
        }
        let batch_value = crate::tilt::tilted_value_raw(&losses, tau);
        est.update(g, batch_value, tau);
        let r = est.get(g);
        let coef: Vec<f64> = losses
            .iter()
            .map(|f| if tau == 0.0 { 1.0 } else { (tau * (f - r)).exp() } / b as f64)
            .collect();
        let step = weighted_row_sum(&grads, &coef);
        let objective = weighted_tilted_value(est.values(), &probs, t);
        guard(iter, objective, &step, &theta)?;
        records.push(IterRecord {
            iter,
            tilts,
            objective,
            grad_norm: norm(&step),
        });
        if cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0 {
            snapshots.push((iter, theta.clone()));
        }
        for (th, s) in theta.iter_mut().zip(&step) {
            *th -= cfg.step_size * s;
        }
        model.retract(&mut theta)?;
    }

    Ok(SolverTrace {
        records,
        snapshots,
        theta,
        termination: Termination::MaxIters,
        seed: cfg.seed,
        ramp_iters: ramp,
    })
}

/// Step size `1 / lambda_max`, with `lambda_max` the largest Hessian eigenvalue
/// of the tree objective at each of the given points, found by power iteration
/// on central-difference Hessian-vector products.
pub fn estimate_step_size(
    model: &dyn LossModel,
    tree: &TiltTree,
    points: &[Vec<f64>],
) -> Result<f64> {
    const ITERS: usize = 100;
    const EPS: f64 = 1e-5;
    if points.is_empty() {
        return Err(TermError::input(
            "need at least one point to estimate a step size",
        ));
    }
    let tilts = tree.levels().to_vec();
    let mut lmax: f64 = 0.0;
    for theta in points {
        let d = theta.len();
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        let mut lambda = 0.0;
        for _ in 0..ITERS {
            let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, x)| t + EPS * x).collect();
            let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, x)| t - EPS * x).collect();
            let (_, gp) = tree_objective_and_gradient(model, tree, &tilts, &plus)?;
            let (_, gm) = tree_objective_and_gradient(model, tree, &tilts, &minus)?;
            let hv: Vec<f64> = gp
                .iter()
                .zip(&gm)
                .map(|(a, b)| (a - b) / (2.0 * EPS))
                .collect();
            let nh = norm(&hv);
            if nh == 0.0 || !nh.is_finite() {
                break;
            }
            lambda = nh;
            v = hv.iter().map(|x| x / nh).collect();
        }
        lmax = lmax.max(lambda);
    }
    if lmax <= 0.0 {
        return Err(TermError::numerical(
            "Hessian estimate vanished; cannot size the step",
        ));
    }
    Ok(1.0 / lmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::model::SampleModel;

    fn toy() -> SampleModel {
        SampleModel::location(&[0.0, 1.0, 4.0]).unwrap()
    }

    fn cfg(alpha: f64, iters: usize) -> SolverConfig {
        SolverConfig {
            step_size: alpha,
            max_iters: iters,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let s = continuation_schedule(-2.0, 100, 50);
        assert_eq!(s.len(), 101);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[25], -1.0);
        assert!(s[50..].iter().all(|t| *t == -2.0));
        let s = continuation_schedule(-2.0, 100, 100);
        assert!(s[99] > -2.0);
        assert_eq!(s[100], -2.0);
        assert!(continuation_schedule(0.0, 10, 5).iter().all(|t| *t == 0.0));
        assert!(continuation_schedule(3.0, 10, 5).iter().all(|t| *t == 3.0));
    }

    #[test]
    fn erm_on_location_toy_is_the_mean() {
        let tree = TiltTree::flat(0.0, 3).unwrap();
        let tr = batch_solve(&toy(), &tree, &cfg(0.1, 10_000)).unwrap();
        assert_eq!(tr.termination, Termination::Converged);
        assert!((tr.theta[0] - 5.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let tree = TiltTree::flat(0.0, 3).unwrap();
        for bad in [
            SolverConfig {
                step_size: 0.0,
                ..SolverConfig::default()
            },
            SolverConfig {
                smoothing: 0.0,
                ..SolverConfig::default()
            },
            SolverConfig {
                smoothing: 1.5,
                ..SolverConfig::default()
            },
            SolverConfig {
                max_iters: 10,
                continuation: Continuation::Linear { ramp_iters: 11 },
                ..SolverConfig::default()
            },
            SolverConfig {
                init: Some(vec![0.0, 0.0]),
                ..SolverConfig::default()
            },
        ] {
            assert!(batch_solve(&toy(), &tree, &bad).is_err());
        }
        let wrong = TiltTree::flat(0.0, 4).unwrap();
        assert!(batch_solve(&toy(), &wrong, &SolverConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let tree = TiltTree::flat(0.0, 3).unwrap();
        let err = batch_solve(&toy(), &tree, &cfg(5.0, 1000)).unwrap_err();
        assert!(matches!(err, TermError::Diverged { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn full_batch_stochastic_matches_batch_at_zero_tilt() {
        let m = SampleModel::new(
            LossKind::Squared,
            vec![vec![0.5], vec![-1.0], vec![2.0], vec![0.1]],
            vec![1.0, -0.5, 2.5, 0.0],
        )
        .unwrap();
        let tree = TiltTree::flat(0.0, 4).unwrap();
        let c = SolverConfig {
            step_size: 0.05,
            max_iters: 200,
            grad_tol: 0.0,
            minibatch_size: 4,
            seed: 9,
            ..SolverConfig::default()
        };
        let a = batch_solve(&m, &tree, &c).unwrap();
        let b = stochastic_solve(&m, &tree, &c).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn running_estimate_updates() {
        let mut e = RunningTiltEstimate::new(2, 1.0).unwrap();
        e.update(1, 3.25, 2.0);
        assert_eq!(e.values(), &[0.0, 3.25]);
        let mut e = RunningTiltEstimate::new(1, 0.25).unwrap();
        e.update(0, 4.0, 0.0);
        assert_eq!(e.get(0), 1.0);
        e.update(0, 1.0, 1.0);
        let expect = (0.75 * 1f64.exp() + 0.25 * 1f64.exp()).ln();
        assert!((e.get(0) - expect).abs() < 1e-15);
        assert!(RunningTiltEstimate::new(1, 0.0).is_err());
    }

    #[test]
    fn stochastic_rejects_oversized_minibatch() {
        let tree = TiltTree::two_level(1.0, 0.0, vec![vec![0], vec![1, 2]]).unwrap();
        let c = SolverConfig {
            minibatch_size: 2,
            ..SolverConfig::default()
        };
        assert!(stochastic_solve(&toy(), &tree, &c).is_err());
    }

    #[test]
    fn trace_csv_has_one_line_per_record() {
        let tree = TiltTree::flat(1.0, 3).unwrap();
        let tr = batch_solve(&toy(), &tree, &cfg(0.1, 5)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "iter,t,objective,grad_norm");
        assert_eq!(lines.len(), 6);
    }
}
