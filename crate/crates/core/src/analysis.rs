//! Loss-vector statistics and tilt sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TermError};
use crate::hierarchy::TiltTree;
use crate::model::LossModel;
use crate::solver::{batch_solve, SolverConfig};
use crate::tilt::{extreme_losses, tilt_weights, tilted_value_raw, LossVector, Tilt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// Cosine between the loss vector and the all-ones vector; 1 for the zero vector.
    pub cosine_to_ones: f64,
    /// Entropy of the tilt weights at the requested tilt, in nats.
    pub weight_entropy: f64,
    pub min_loss: f64,
    pub max_loss: f64,
}

pub fn loss_stats(losses: &LossVector, t: Tilt) -> LossStats {
    let f = losses.as_slice();
    let n = f.len() as f64;
    let ex = extreme_losses(losses);
    let variance = f.iter().map(|x| (x - ex.avg_loss).powi(2)).sum::<f64>() / n;
    let sq: f64 = f.iter().map(|x| x * x).sum();
    let cosine_to_ones = if sq == 0.0 {
        1.0
    } else {
        (f.iter().sum::<f64>() / (n.sqrt() * sq.sqrt())).clamp(-1.0, 1.0)
    };
    LossStats {
        mean: ex.avg_loss,
        variance,
        cosine_to_ones,
        weight_entropy: tilt_weights(losses, t).entropy(),
        min_loss: ex.min_loss,
        max_loss: ex.max_loss,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t: f64,
    pub theta: Vec<f64>,
    /// Statistics at the solution, with entropy measured at tilt `t`.
    pub stats: LossStats,
    /// Optimal tilted objective `R(t; theta(t))`.
    pub tilted_objective: f64,
    /// Weight entropies `H(w(tau; theta(t)))` for each configured `tau`.
    pub entropies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub t_grid: Vec<f64>,
    pub entropy_taus: Vec<f64>,
    /// One entry per grid tilt; `Err` holds the message of a failed solve.
    pub points: Vec<std::result::Result<SweepPoint, String>>,
}

fn sweep_point(
    model: &dyn LossModel,
    t: f64,
    cfg: &SolverConfig,
    taus: &[f64],
) -> Result<SweepPoint> {
    let tree = TiltTree::flat(t, model.num_units())?;
    let tr = batch_solve(model, &tree, cfg)?;
    let losses = LossVector::new(model.losses(&tr.theta)?)?;
    let entropies = taus
        .iter()
        .map(|&tau| Tilt::new(tau).map(|tau| tilt_weights(&losses, tau).entropy()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepPoint {
        t,
        stats: loss_stats(&losses, Tilt::new(t)?),
        tilted_objective: tilted_value_raw(losses.as_slice(), t),
        entropies,
        iterations: tr.iterations(),
        converged: tr.termination == crate::solver::Termination::Converged,
        theta: tr.theta,
    })
}

/// Solve at every tilt of a strictly increasing grid, in parallel. Negative
/// tilts follow the configured continuation. Failed points are recorded and
/// the sweep continues.
pub fn tradeoff_sweep(
    model: &dyn LossModel,
    t_grid: &[f64],
    cfg: &SolverConfig,
    entropy_taus: &[f64],
) -> Result<SweepResult> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(TermError::input("tilt grid must be non-empty and finite"));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TermError::input("tilt grid must be strictly increasing"));
    }
    let points = t_grid
        .par_iter()
        .map(|&t| sweep_point(model, t, cfg, entropy_taus).map_err(|e| e.to_string()))
        .collect();
    Ok(SweepResult {
        t_grid: t_grid.to_vec(),
        entropy_taus: entropy_taus.to_vec(),
        points,
    })
}

impl SweepResult {
    /// One row per tilt. Failed points keep their tilt and leave the rest empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self
            .points
            .iter()
            .find_map(|p| p.as_ref().ok().map(|p| p.theta.len()))
            .unwrap_or(0);
        let mut header: Vec<String> = [
            "t",
            "avg_loss",
            "max_loss",
            "min_loss",
            "variance",
            "cosine",
            "entropy",
            "tilted_objective",
            "iterations",
            "converged",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(
            self.entropy_taus
                .iter()
                .map(|tau| format!("entropy_tau_{tau}")),
        );
        header.extend((0..dim).map(|k| format!("theta_{k}")));
        header.push("error".into());
        w.write_record(&header).map_err(csv_err)?;
        for (t, p) in self.t_grid.iter().zip(&self.points) {
            let mut row = vec![t.to_string()];
            match p {
                Ok(p) => {
                    let s = &p.stats;
                    row.extend(
                        [
                            s.mean,
                            s.max_loss,
                            s.min_loss,
                            s.variance,
                            s.cosine_to_ones,
                            s.weight_entropy,
                            p.tilted_objective,
                        ]
                        .iter()
                        .map(f64::to_string),
                    );
                    row.push(p.iterations.to_string());
                    row.push(p.converged.to_string());
                    row.extend(p.entropies.iter().map(f64::to_string));
                    row.extend(p.theta.iter().map(f64::to_string));
                    row.push(String::new());
                }
                Err(e) => {
                    row.extend(vec![String::new(); header.len() - 2]);
                    row.push(e.clone());
                }
            }
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    NonIncreasing,
    NonDecreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Range {
    /// Pairs of consecutive tilts with both `t >= 0`.
    NonNegative,
    /// Pairs with both `t <= 0`.
    NonPositive,
    All,
}

impl Range {
    fn admits(self, a: f64, b: f64) -> bool {
        match self {
            Range::NonNegative => a >= 0.0 && b >= 0.0,
            Range::NonPositive => a <= 0.0 && b <= 0.0,
            Range::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub direction: Direction,
    pub range: Range,
    pub passed: bool,
    /// Largest step against the expected direction, relative to the pair's magnitude.
    pub worst_violation: f64,
    /// Tilt pair where the worst violation occurred.
    pub worst_pair: Option<(f64, f64)>,
}

/// Check that `values` move in `direction` along consecutive admitted tilt pairs,
/// allowing `rel_slack * max(|a|, |b|)`.
pub fn monotone_check(
    name: &str,
    t: &[f64],
    values: &[f64],
    direction: Direction,
    range: Range,
    rel_slack: f64,
) -> PropertyCheck {
    let mut worst = 0.0f64;
    let mut pair = None;
    let mut passed = true;
    for k in 1..t.len().min(values.len()) {
        if !range.admits(t[k - 1], t[k]) {
            continue;
        }
        let (a, b) = (values[k - 1], values[k]);
        let against = match direction {
            Direction::NonIncreasing => b - a,
            Direction::NonDecreasing => a - b,
        };
        let scale = a.abs().max(b.abs());
        let rel = if scale > 0.0 { against / scale } else { 0.0 };
        if !(against <= rel_slack * scale) {
            passed = false;
        }
        if rel > worst || rel.is_nan() {
            worst = rel;
            pair = Some((t[k - 1], t[k]));
        }
    }
    PropertyCheck {
        name: name.to_string(),
        direction,
        range,
        passed,
        worst_violation: worst,
        worst_pair: pair,
    }
}

/// Monotonicity properties of solutions along a sweep. Any failed point fails
/// every property.
pub fn check_properties(sweep: &SweepResult, rel_slack: f64) -> Vec<PropertyCheck> {
    let ok: Vec<&SweepPoint> = sweep
        .points
        .iter()
        .filter_map(|p| p.as_ref().ok())
        .collect();
    let complete = ok.len() == sweep.points.len();
    let t: Vec<f64> = ok.iter().map(|p| p.t).collect();
    let col = |f: &dyn Fn(&SweepPoint) -> f64| ok.iter().map(|p| f(p)).collect::<Vec<f64>>();
    use Direction::*;
    let mut out = vec![
        monotone_check(
            "max-loss",
            &t,
            &col(&|p| p.stats.max_loss),
            NonIncreasing,
            Range::NonNegative,
            rel_slack,
        ),
        monotone_check(
            "avg-loss",
            &t,
            &col(&|p| p.stats.mean),
            NonDecreasing,
            Range::NonNegative,
            rel_slack,
        ),
        monotone_check(
            "min-loss",
            &t,
            &col(&|p| p.stats.min_loss),
            NonDecreasing,
            Range::NonPositive,
            rel_slack,
        ),
        monotone_check(
            "avg-loss-negative",
            &t,
            &col(&|p| p.stats.mean),
            NonIncreasing,
            Range::NonPositive,
            rel_slack,
        ),
        monotone_check(
            "variance",
            &t,
            &col(&|p| p.stats.variance),
            NonIncreasing,
            Range::All,
            rel_slack,
        ),
        monotone_check(
            "cosine",
            &t,
            &col(&|p| p.stats.cosine_to_ones),
            NonDecreasing,
            Range::All,
            rel_slack,
        ),
    ];
    for (k, tau) in sweep.entropy_taus.iter().enumerate() {
        out.push(monotone_check(
            &format!("entropy-tau-{tau}"),
            &t,
            &col(&|p| p.entropies[k]),
            NonDecreasing,
            Range::All,
            rel_slack,
        ));
    }
    out.push(monotone_check(
        "optimal-tilted-objective",
        &t,
        &col(&|p| p.tilted_objective),
        NonDecreasing,
        Range::All,
        rel_slack,
    ));
    if !complete {
        for c in &mut out {
            c.passed = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleModel;

    fn lv(v: &[f64]) -> LossVector {
        LossVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn stats_examples() {
        let s = loss_stats(&lv(&[1.0, 2.0, 3.0]), Tilt::ERM);
        assert!((s.variance - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.weight_entropy - 3f64.ln()).abs() < 1e-15);
        let s = loss_stats(&lv(&[2.5; 3]), Tilt::ERM);
        assert_eq!(s.variance, 0.0);
        assert!((s.cosine_to_ones - 1.0).abs() < 1e-15);
        let s = loss_stats(&lv(&[0.0, 2f64.ln()]), Tilt::new(1.0).unwrap());
        assert!((s.weight_entropy - 0.636_514_168_294_812_8).abs() < 1e-15);
        assert_eq!(loss_stats(&lv(&[0.0, 0.0]), Tilt::ERM).cosine_to_ones, 1.0);
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let m = SampleModel::location(&[0.0, 1.0, 4.0]).unwrap();
        let cfg = SolverConfig::default();
        assert!(tradeoff_sweep(&m, &[0.0, 0.0], &cfg, &[]).is_err());
        assert!(tradeoff_sweep(&m, &[1.0, 0.0], &cfg, &[]).is_err());
        assert!(tradeoff_sweep(&m, &[], &cfg, &[]).is_err());
    }

    #[test]
    fn failed_point_is_recorded() {
        let m = SampleModel::location(&[0.0, 1.0, 4.0]).unwrap();
        let cfg = SolverConfig {
            step_size: 5.0,
            max_iters: 500,
            ..SolverConfig::default()
        };
        let s = tradeoff_sweep(&m, &[0.0], &cfg, &[]).unwrap();
        assert!(s.points[0].is_err());
        assert!(check_properties(&s, 1e-4).iter().all(|c| !c.passed));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("diverged"));
    }

    #[test]
    fn monotone_check_slack() {
        let t = [0.0, 1.0, 2.0];
        assert!(
            monotone_check(
                "x",
                &t,
                &[3.0, 2.0, 2.0001],
                Direction::NonIncreasing,
                Range::All,
                1e-4
            )
            .passed
        );
        assert!(
            !monotone_check(
                "x",
                &t,
                &[3.0, 2.0, 2.01],
                Direction::NonIncreasing,
                Range::All,
                1e-4
            )
            .passed
        );
        assert!(
            monotone_check(
                "x",
                &[-2.0, -1.0, 0.0],
                &[0.0, 5.0, 4.0],
                Direction::NonDecreasing,
                Range::NonNegative,
                0.0
            )
            .passed
        );
    }
}
