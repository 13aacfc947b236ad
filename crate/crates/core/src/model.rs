//! Loss models: a parameterized family of per-unit losses the solvers can drive.
//!
//! A "unit" is whatever one entry of the loss vector stands for: a sample for
//! the per-sample families, a whole group for PCA.

use crate::error::{Result, TermError};
use crate::losses::{orthonormalize_columns, sample_loss, LossKind, PcaGroup};
use crate::tilt::GradientMatrix;

pub trait LossModel: Sync {
    fn num_units(&self) -> usize;

    fn dim(&self) -> usize;

    /// Losses and gradients for the listed units, in the listed order.
    fn eval_units(&self, theta: &[f64], units: &[usize]) -> Result<(Vec<f64>, GradientMatrix)>;

    fn eval_all(&self, theta: &[f64]) -> Result<(Vec<f64>, GradientMatrix)> {
        let all: Vec<usize> = (0..self.num_units()).collect();
        self.eval_units(theta, &all)
    }

    /// Loss vector only.
    fn losses(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_all(theta)?.0)
    }

    /// Map an iterate back onto the feasible set after a step. Identity by default.
    fn retract(&self, _theta: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn initial_theta(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// Per-sample loss over a feature matrix and target vector.
#[derive(Debug, Clone)]
pub struct SampleModel {
    kind: LossKind,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    feature_dim: usize,
}

impl SampleModel {
    pub fn new(kind: LossKind, features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if matches!(kind, LossKind::PcaReconstruction { .. }) {
            return Err(TermError::input(
                "use PcaModel for the PCA reconstruction loss",
            ));
        }
        if features.is_empty() || features.len() != targets.len() {
            return Err(TermError::input(format!(
                "{} feature rows for {} targets",
                features.len(),
                targets.len()
            )));
        }
        let feature_dim = features[0].len();
        if features.iter().any(|r| r.len() != feature_dim) {
            return Err(TermError::input("ragged feature matrix"));
        }
        if kind == LossKind::SquaredDistance && feature_dim == 0 {
            return Err(TermError::input(
                "point estimation needs at least one feature",
            ));
        }
        if kind == LossKind::Logistic {
            if let Some(i) = targets.iter().position(|y| *y != 1.0 && *y != -1.0) {
                return Err(TermError::input(format!(
                    "logistic target {i} is {}, expected -1 or +1",
                    targets[i]
                )));
            }
        }
        Ok(SampleModel {
            kind,
            features,
            targets,
            feature_dim,
        })
    }

    /// One-dimensional location problem: squared loss with no features,
    /// so the only parameter is the intercept.
    pub fn location(samples: &[f64]) -> Result<Self> {
        SampleModel::new(
            LossKind::Squared,
            vec![Vec::new(); samples.len()],
            samples.to_vec(),
        )
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Linear score `w.x + b` (regression/classification layouts).
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (w, xj) in theta.iter().zip(x) {
            s += w * xj;
        }
        s + theta[x.len()]
    }
}

impl LossModel for SampleModel {
    fn num_units(&self) -> usize {
        self.targets.len()
    }

    fn dim(&self) -> usize {
        self.kind.param_dim(self.feature_dim)
    }

    fn eval_units(&self, theta: &[f64], units: &[usize]) -> Result<(Vec<f64>, GradientMatrix)> {
        let dim = self.dim();
        let mut losses = Vec::with_capacity(units.len());
        let mut grads = GradientMatrix::zeros(units.len(), dim);
        for (k, &i) in units.iter().enumerate() {
            let x = self
                .features
                .get(i)
                .ok_or_else(|| TermError::input(format!("unit {i} out of range")))?;
            let e = sample_loss(self.kind, x, self.targets[i], theta)?;
            losses.push(e.value);
            grads.row_mut(k).copy_from_slice(&e.grad);
        }
        Ok((losses, grads))
    }
}

/// PCA reconstruction loss, one unit per group, over a shared projection `U`.
#[derive(Debug, Clone)]
pub struct PcaModel {
    groups: Vec<PcaGroup>,
    feature_dim: usize,
    rank: usize,
}

impl PcaModel {
    pub fn new(groups: Vec<Vec<Vec<f64>>>, rank: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(TermError::input("PCA model needs at least one group"));
        }
        let prepared = groups
            .into_iter()
            .map(|g| PcaGroup::new(g, rank))
            .collect::<Result<Vec<_>>>()?;
        let feature_dim = prepared[0].dim();
        if prepared.iter().any(|g| g.dim() != feature_dim) {
            return Err(TermError::input("PCA groups disagree on feature dimension"));
        }
        Ok(PcaModel {
            groups: prepared,
            feature_dim,
            rank,
        })
    }

    pub fn groups(&self) -> &[PcaGroup] {
        &self.groups
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

impl LossModel for PcaModel {
    fn num_units(&self) -> usize {
        self.groups.len()
    }

    fn dim(&self) -> usize {
        self.feature_dim * self.rank
    }

    fn eval_units(&self, theta: &[f64], units: &[usize]) -> Result<(Vec<f64>, GradientMatrix)> {
        let mut losses = Vec::with_capacity(units.len());
        let mut grads = GradientMatrix::zeros(units.len(), self.dim());
        for (k, &g) in units.iter().enumerate() {
            let group = self
                .groups
                .get(g)
                .ok_or_else(|| TermError::input(format!("group {g} out of range")))?;
            let e = group.loss(theta)?;
            losses.push(e.value);
            grads.row_mut(k).copy_from_slice(&e.grad);
        }
        Ok((losses, grads))
    }

    fn retract(&self, theta: &mut [f64]) -> Result<()> {
        orthonormalize_columns(theta, self.feature_dim, self.rank)
    }

    /// First `rank` coordinate axes.
    fn initial_theta(&self) -> Vec<f64> {
        let d = self.feature_dim;
        let mut u = vec![0.0; d * self.rank];
        for c in 0..self.rank {
            u[c * d + c] = 1.0;
        }
        u
    }
}
