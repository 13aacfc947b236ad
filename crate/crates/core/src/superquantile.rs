//! Fraction-of-losses-above-threshold functionals and their tilted upper bound.
//!
//! For a threshold `a`, `Q(a; theta)` is the share of losses at least `a`.
//! The tilted bound
//!
//! ```text
//! Qt(a; t, theta) = (exp(t R(t; theta)) - exp(t f_min)) / (exp(t a) - exp(t f_min))
//! ```
//!
//! dominates it whenever every loss is at least `f_min`. Minimizing over `theta`
//! and `t` gives the chain `Q0 <= Q1 <= Q2 <= Q3` reported by [`q_chain`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TermError};
use crate::hierarchy::TiltTree;
use crate::model::LossModel;
use crate::solver::{batch_solve, SolverConfig};
use crate::tilt::{tilted_value_raw, LossVector};

/// Share of entries with `f_i >= a`.
pub fn quantile_exceeding(losses: &LossVector, a: f64) -> f64 {
    count_at_least(losses.as_slice(), a) as f64 / losses.len() as f64
}

fn count_at_least(f: &[f64], a: f64) -> usize {
    f.iter().filter(|&&x| x >= a).count()
}

/// Tilted upper bound on [`quantile_exceeding`]. `t == 0` uses the continuous
/// extension `(mean - f_min) / (a - f_min)`.
pub fn q_tilde_bound(losses: &LossVector, a: f64, t: f64, f_min: f64) -> Result<f64> {
    if !(a.is_finite() && f_min.is_finite() && t.is_finite()) {
        return Err(TermError::input("threshold, tilt and f_min must be finite"));
    }
    if a <= f_min {
        return Err(TermError::Domain(format!(
            "threshold {a} must exceed f_min {f_min}"
        )));
    }
    let r = tilted_value_raw(losses.as_slice(), t);
    Ok(q_tilde_raw(r, a, t, f_min))
}

fn q_tilde_raw(r: f64, a: f64, t: f64, f_min: f64) -> f64 {
    if t == 0.0 {
        return (r - f_min) / (a - f_min);
    }
    let u = t * (r - f_min);
    let v = t * (a - f_min);
    if t > 0.0 && u.max(v) > 50.0 {
        // factor out exp(v) so neither exponential overflows
        (u - v).exp() * (-(-u).exp_m1()) / (-(-v).exp_m1())
    } else {
        u.exp_m1() / v.exp_m1()
    }
}

/// Default tilt grid: 16 log-spaced magnitudes in `[1e-2, 1e2]`, both signs, plus zero.
pub fn default_t_grid() -> Vec<f64> {
    let mags: Vec<f64> = (0..16)
        .map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 15.0))
        .collect();
    let mut grid: Vec<f64> = mags.iter().rev().map(|m| -m).collect();
    grid.push(0.0);
    grid.extend(mags);
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainVerdict {
    /// `a` below the smallest attainable loss: every loss exceeds it, `Q0 = 1`.
    BelowRange,
    /// `a` above the attainable max-loss: `Q0 = 0`.
    AboveRange,
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperquantileReport {
    pub a: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub verdict: ChainVerdict,
    /// From the grid oracle when one was configured, or from the verdict.
    pub q0: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    /// Minimized tilted bound. Can exceed 1 when the bound is loose.
    pub q3: Option<f64>,
    pub t_tilde: Option<f64>,
    pub t_grid: Vec<f64>,
}

/// Axis-aligned box for the exhaustive `Q0` search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub t_grid: Vec<f64>,
    /// Tilt magnitude used to estimate the extreme optimal objectives.
    pub t_max: f64,
    pub solver: SolverConfig,
    pub oracle: Option<GridBox>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            t_grid: default_t_grid(),
            t_max: 100.0,
            solver: SolverConfig::default(),
            oracle: None,
        }
    }
}

/// Solutions over the tilt grid, reusable across thresholds.
#[derive(Debug, Clone)]
pub struct ChainSolutions {
    pub t_grid: Vec<f64>,
    /// Loss vectors at `theta(t)` for each grid tilt.
    pub losses: Vec<Vec<f64>>,
    pub thetas: Vec<Vec<f64>>,
    pub f_min: f64,
    pub f_max: f64,
}

fn solve_at(model: &dyn LossModel, t: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let tree = TiltTree::flat(t, model.num_units())?;
    let tr = batch_solve(model, &tree, cfg)?;
    let losses = model.losses(&tr.theta)?;
    Ok((tr.theta, losses))
}

impl ChainSolutions {
    pub fn solve(model: &dyn LossModel, cfg: &ChainConfig) -> Result<Self> {
        if cfg.t_grid.is_empty() || cfg.t_grid.iter().any(|t| !t.is_finite()) {
            return Err(TermError::input("tilt grid must be non-empty and finite"));
        }
        if !(cfg.t_max > 0.0 && cfg.t_max.is_finite()) {
            return Err(TermError::input("t_max must be positive"));
        }
        let mut tilts = cfg.t_grid.clone();
        tilts.push(-cfg.t_max);
        tilts.push(cfg.t_max);
        let solved = tilts
            .par_iter()
            .map(|&t| solve_at(model, t, &cfg.solver))
            .collect::<Result<Vec<_>>>()?;
        let (mut thetas, mut losses): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
        let hi = losses.pop().unwrap();
        let lo = losses.pop().unwrap();
        thetas.truncate(cfg.t_grid.len());
        // f_min must lower-bound every loss the bound is evaluated on
        let f_min = losses
            .iter()
            .chain(std::iter::once(&lo))
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let f_max = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ChainSolutions {
            t_grid: cfg.t_grid.clone(),
            losses,
            thetas,
            f_min,
            f_max,
        })
    }

    /// Chain values at threshold `a`; `q0` comes from `oracle` when given.
    pub fn chain_at(&self, a: f64, q0: Option<f64>) -> SuperquantileReport {
        let base = SuperquantileReport {
            a,
            f_min: self.f_min,
            f_max: self.f_max,
            verdict: ChainVerdict::Chain,
            q0,
            q1: None,
            q2: None,
            q3: None,
            t_tilde: None,
            t_grid: self.t_grid.clone(),
        };
        if a <= self.f_min {
            return SuperquantileReport {
                verdict: ChainVerdict::BelowRange,
                q0: Some(1.0),
                ..base
            };
        }
        if a > self.f_max {
            return SuperquantileReport {
                verdict: ChainVerdict::AboveRange,
                q0: Some(0.0),
                ..base
            };
        }
        let q: Vec<f64> = self
            .losses
            .iter()
            .map(|f| count_at_least(f, a) as f64 / f.len() as f64)
            .collect();
        let qt: Vec<f64> = self
            .losses
            .iter()
            .zip(&self.t_grid)
            .map(|(f, &t)| q_tilde_raw(tilted_value_raw(f, t), a, t, self.f_min))
            .collect();
        let q1 = q.iter().copied().fold(f64::INFINITY, f64::min);
        // ties go to the smallest |t|, then the smaller t
        let mut order: Vec<usize> = (0..self.t_grid.len()).collect();
        order.sort_by(|&i, &j| {
            let (ti, tj) = (self.t_grid[i], self.t_grid[j]);
            ti.abs().total_cmp(&tj.abs()).then(ti.total_cmp(&tj))
        });
        let mut best = order[0];
        for &i in &order[1..] {
            if qt[i] < qt[best] {
                best = i;
            }
        }
        SuperquantileReport {
            q1: Some(q1),
            q2: Some(q[best]),
            q3: Some(qt[best]),
            t_tilde: Some(self.t_grid[best]),
            ..base
        }
    }
}

/// Solve over the grid and assemble the chain at `a`.
pub fn q_chain(model: &dyn LossModel, a: f64, cfg: &ChainConfig) -> Result<SuperquantileReport> {
    let sol = ChainSolutions::solve(model, cfg)?;
    let q0 = match &cfg.oracle {
        Some(b) if a > sol.f_min && a <= sol.f_max => Some(q_zero_grid_oracle(model, a, b)?),
        _ => None,
    };
    Ok(sol.chain_at(a, q0))
}

fn axis(lo: f64, hi: f64, res: f64) -> Vec<f64> {
    let n = ((hi - lo) / res + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * res).collect()
}

/// Exhaustive minimum of `Q(a; theta)` over a grid in a box of dimension at most 2.
pub fn q_zero_grid_oracle(model: &dyn LossModel, a: f64, bx: &GridBox) -> Result<f64> {
    Ok(q_zero_grid_oracle_many(model, &[a], bx)?[0])
}

/// [`q_zero_grid_oracle`] for several thresholds, sharing one pass over the grid.
pub fn q_zero_grid_oracle_many(
    model: &dyn LossModel,
    thresholds: &[f64],
    bx: &GridBox,
) -> Result<Vec<f64>> {
    let d = model.dim();
    if d > 2 {
        return Err(TermError::Unsupported(format!(
            "grid oracle supports at most 2 parameters, model has {d}"
        )));
    }
    if bx.lower.len() != d || bx.upper.len() != d {
        return Err(TermError::input(format!("box must have {d} coordinates")));
    }
    if !(bx.resolution > 0.0 && bx.resolution.is_finite()) {
        return Err(TermError::input("grid resolution must be positive"));
    }
    if bx
        .lower
        .iter()
        .zip(&bx.upper)
        .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
    {
        return Err(TermError::input(
            "box bounds must be finite with lower <= upper",
        ));
    }
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|k| axis(bx.lower[k], bx.upper[k], bx.resolution))
        .collect();
    let points: Vec<Vec<f64>> = match d {
        1 => axes[0].iter().map(|&x| vec![x]).collect(),
        2 => axes[0]
            .iter()
            .flat_map(|&x| axes[1].iter().map(move |&y| vec![x, y]))
            .collect(),
        _ => vec![Vec::new()],
    };
    let n = model.num_units();
    let m = thresholds.len();
    let best = points
        .par_iter()
        .map(|p| {
            let mut f = model.losses(p)?;
            f.sort_by(f64::total_cmp);
            Ok::<_, TermError>(
                thresholds
                    .iter()
                    .map(|&a| n - f.partition_point(|&x| x < a))
                    .collect::<Vec<usize>>(),
            )
        })
        .try_reduce(
            || vec![usize::MAX; m],
            |x, y| Ok(x.iter().zip(&y).map(|(a, b)| *a.min(b)).collect()),
        )?;
    Ok(best.iter().map(|&c| c as f64 / n as f64).collect())
}

/// `k`-th smallest loss, 1-based.
pub fn k_loss(losses: &LossVector, k: usize) -> Result<f64> {
    let n = losses.len();
    if k == 0 || k > n {
        return Err(TermError::Domain(format!("k = {k} outside 1..={n}")));
    }
    let mut v = losses.as_slice().to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[k - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum KLossBound {
    Holds {
        bound: f64,
    },
    Violated {
        bound: f64,
    },
    /// The log argument is not positive, so the bound says nothing.
    Vacuous,
}

impl KLossBound {
    pub fn holds(self) -> bool {
        !matches!(self, KLossBound::Violated { .. })
    }
}

/// Check `R_(k) <= f_min + (1/t) log((exp(t (R - f_min)) - k/N) / (1 - k/N))`.
pub fn k_loss_bound_check(losses: &LossVector, k: usize, t: f64, f_min: f64) -> Result<KLossBound> {
    let n = losses.len();
    if k == 0 || k >= n {
        return Err(TermError::Domain(format!("k = {k} must lie in 1..{n}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(TermError::Domain(format!("tilt must be positive, got {t}")));
    }
    let r = tilted_value_raw(losses.as_slice(), t);
    let p = k as f64 / n as f64;
    let arg = ((t * (r - f_min)).exp() - p) / (1.0 - p);
    if !(arg > 0.0) {
        return Ok(KLossBound::Vacuous);
    }
    let bound = f_min + arg.ln() / t;
    let rk = k_loss(losses, k)?;
    Ok(if rk <= bound {
        KLossBound::Holds { bound }
    } else {
        KLossBound::Violated { bound }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleModel;
    use crate::tilt::extreme_losses;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LossVector {
        LossVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn quantile_examples() {
        let l = lv(&[1.0, 2.0, 3.0]);
        assert_eq!(quantile_exceeding(&l, 2.5), 1.0 / 3.0);
        assert_eq!(quantile_exceeding(&l, 0.0), 1.0);
        assert_eq!(quantile_exceeding(&l, 3.0), 1.0 / 3.0);
    }

    #[test]
    fn q_tilde_example() {
        let q = q_tilde_bound(&lv(&[1.0, 2.0, 3.0]), 2.5, 1.0, 0.0).unwrap();
        assert!((q - 0.810_578_717_834_505_4).abs() < 1e-14, "{q}");
    }

    #[test]
    fn q_tilde_saturation_and_domain() {
        let l = lv(&[2.0; 4]);
        assert!(q_tilde_bound(&l, 2.0, 3.0, 0.5).unwrap() >= 1.0 - 1e-15);
        assert!(matches!(
            q_tilde_bound(&l, 0.5, 1.0, 0.5),
            Err(TermError::Domain(_))
        ));
    }

    #[test]
    fn q_tilde_large_tilts_do_not_produce_nan() {
        let l = lv(&[1.0, 2.0, 30.0]);
        for t in [-1e3, -50.0, 50.0, 1e3] {
            // for t > 0 the true value here is about exp(t * 20) and may saturate to inf
            let q = q_tilde_bound(&l, 10.0, t, 0.0).unwrap();
            assert!(
                !q.is_nan() && q >= quantile_exceeding(&l, 10.0) - 1e-12,
                "t={t} q={q}"
            );
        }
        let near = lv(&[9.0, 10.5]);
        let q = q_tilde_bound(&near, 10.0, 200.0, 0.0).unwrap();
        assert!(q.is_finite() && q > 0.5, "{q}");
    }

    #[test]
    fn default_grid_shape() {
        let g = default_t_grid();
        assert_eq!(g.len(), 33);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g[16], 0.0);
        assert!((g[17] - 1e-2).abs() < 1e-15 && (g[32] - 1e2).abs() < 1e-10);
        assert_eq!(g[0], -g[32]);
    }

    #[test]
    fn k_loss_examples() {
        let l = lv(&[3.0, 1.0, 2.0]);
        assert_eq!(k_loss(&l, 1).unwrap(), 1.0);
        assert_eq!(k_loss(&l, 3).unwrap(), 3.0);
        assert!(k_loss(&l, 0).is_err());
        assert!(k_loss(&l, 4).is_err());
        assert!(k_loss_bound_check(&l, 3, 1.0, 0.0).is_err());
    }

    #[test]
    fn max_loss_under_lse_bound() {
        let l = lv(&[0.2, 1.7, 0.9, 1.1]);
        for t in [0.5, 2.0, 10.0] {
            let r = tilted_value_raw(l.as_slice(), t);
            assert!(k_loss(&l, 4).unwrap() <= r + (4f64).ln() / t + 1e-12);
        }
    }

    #[test]
    fn oracle_on_location_toy() {
        let m = SampleModel::location(&[0.0, 1.0, 4.0]).unwrap();
        let bx = GridBox {
            lower: vec![-1.0],
            upper: vec![5.0],
            resolution: 1e-3,
        };
        assert_eq!(q_zero_grid_oracle(&m, 0.5, &bx).unwrap(), 1.0 / 3.0);
        assert_eq!(q_zero_grid_oracle(&m, 100.0, &bx).unwrap(), 0.0);
        let half = GridBox {
            resolution: 5e-4,
            ..bx.clone()
        };
        for a in [0.3, 1.0, 2.5, 4.2] {
            let x = q_zero_grid_oracle(&m, a, &bx).unwrap();
            let y = q_zero_grid_oracle(&m, a, &half).unwrap();
            assert!((x - y).abs() <= 1.0 / 3.0 + 1e-15);
            assert!(y <= x);
        }
    }

    #[test]
    fn oracle_rejects_high_dimension() {
        let m = SampleModel::new(
            crate::losses::LossKind::Squared,
            vec![vec![1.0, 2.0], vec![0.0, 1.0]],
            vec![0.0, 1.0],
        )
        .unwrap();
        let bx = GridBox {
            lower: vec![0.0; 3],
            upper: vec![1.0; 3],
            resolution: 0.5,
        };
        assert!(matches!(
            q_zero_grid_oracle(&m, 1.0, &bx),
            Err(TermError::Unsupported(_))
        ));
    }

    #[test]
    fn chain_verdicts_outside_range() {
        let sol = ChainSolutions {
            t_grid: vec![-1.0, 0.0, 1.0],
            losses: vec![vec![1.0, 2.0]; 3],
            thetas: vec![vec![0.0]; 3],
            f_min: 1.0,
            f_max: 2.0,
        };
        let lo = sol.chain_at(0.5, None);
        assert_eq!(lo.verdict, ChainVerdict::BelowRange);
        assert_eq!(lo.q0, Some(1.0));
        let hi = sol.chain_at(2.5, None);
        assert_eq!(hi.verdict, ChainVerdict::AboveRange);
        assert_eq!(hi.q0, Some(0.0));
    }

    #[test]
    fn tied_bounds_pick_smallest_magnitude() {
        let sol = ChainSolutions {
            t_grid: vec![-2.0, -1.0, 1.0, 2.0],
            losses: vec![vec![1.0, 1.0]; 4],
            thetas: vec![vec![0.0]; 4],
            f_min: 0.0,
            f_max: 2.0,
        };
        // losses sit exactly at a, so the bound is 1 at every tilt
        let r = sol.chain_at(1.0, None);
        assert_eq!(r.q3, Some(1.0));
        assert_eq!(r.t_tilde, Some(-1.0));
    }

    proptest! {
        #[test]
        fn bound_dominates_quantile(
            f in prop::collection::vec(0.0f64..10.0, 1..40),
            a_frac in 0.01f64..1.5,
            t in prop_oneof![-20.0f64..-0.01, 0.01f64..20.0, Just(0.0)],
            gap in 0.0f64..2.0,
        ) {
            let l = lv(&f);
            let ex = extreme_losses(&l);
            let f_min = ex.min_loss - gap;
            let a = f_min + a_frac * (ex.max_loss - f_min + 0.1);
            let q = quantile_exceeding(&l, a);
            let qt = q_tilde_bound(&l, a, t, f_min).unwrap();
            prop_assert!(qt >= q - 1e-12, "q={} qt={}", q, qt);
        }

        #[test]
        fn k_bound_holds(
            f in prop::collection::vec(-5.0f64..5.0, 2..40),
            kf in 0.0f64..1.0,
            t in 0.01f64..30.0,
            gap in 0.0f64..1.0,
        ) {
            let l = lv(&f);
            let n = l.len();
            let k = 1 + ((n - 1) as f64 * kf) as usize % (n - 1);
            let f_min = extreme_losses(&l).min_loss - gap;
            prop_assert!(k_loss_bound_check(&l, k, t, f_min).unwrap().holds());
        }

        #[test]
        fn k_loss_endpoints(f in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let l = lv(&f);
            let ex = extreme_losses(&l);
            prop_assert_eq!(k_loss(&l, 1).unwrap(), ex.min_loss);
            prop_assert_eq!(k_loss(&l, l.len()).unwrap(), ex.max_loss);
        }
    }
}
