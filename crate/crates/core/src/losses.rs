//! Differentiable per-sample loss families with analytic gradients.
//!
//! Parameter layouts:
//! * `Squared`, `Logistic`: feature weights followed by one intercept, `d_x + 1` entries.
//! * `SquaredDistance`: a point in feature space, `d_x` entries.
//! * `PcaReconstruction { rank }`: a `d_x x rank` projection stored column-major.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TermError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `(y - w.x - b)^2`
    Squared,
    /// `log(1 + exp(-y (w.x + b)))` with `y` in {-1, +1}
    Logistic,
    /// `||x - theta||^2`, point estimation
    SquaredDistance,
    /// Excess rank-r reconstruction error of a whole group.
    PcaReconstruction { rank: usize },
}

impl LossKind {
    /// Parameter dimension for `d_x` features.
    pub fn param_dim(self, feature_dim: usize) -> usize {
        match self {
            LossKind::Squared | LossKind::Logistic => feature_dim + 1,
            LossKind::SquaredDistance => feature_dim,
            LossKind::PcaReconstruction { rank } => feature_dim * rank,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, LossKind::Logistic)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Squared => write!(f, "squared"),
            LossKind::Logistic => write!(f, "logistic"),
            LossKind::SquaredDistance => write!(f, "squared-distance"),
            LossKind::PcaReconstruction { rank } => write!(f, "pca:{rank}"),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = TermError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "logistic" => Ok(LossKind::Logistic),
            "squared-distance" | "distance" => Ok(LossKind::SquaredDistance),
            _ => {
                if let Some(r) = s.strip_prefix("pca:") {
                    let rank = r
                        .parse()
                        .map_err(|_| TermError::input(format!("bad PCA rank in '{s}'")))?;
                    Ok(LossKind::PcaReconstruction { rank })
                } else {
                    Err(TermError::input(format!(
                        "unknown loss '{s}' (expected squared, logistic, squared-distance, pca:<rank>)"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// The data a single loss term is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum LossData<'a> {
    Sample { features: &'a [f64], target: f64 },
    Group(&'a PcaGroup),
}

pub fn loss_value_and_grad(kind: LossKind, data: LossData<'_>, theta: &[f64]) -> Result<LossEval> {
    match (kind, data) {
        (LossKind::PcaReconstruction { rank }, LossData::Group(g)) => {
            if g.rank() != rank {
                return Err(TermError::input(format!(
                    "group prepared for rank {}, loss asks for rank {rank}",
                    g.rank()
                )));
            }
            g.loss(theta)
        }
        (LossKind::PcaReconstruction { .. }, LossData::Sample { .. }) => Err(TermError::input(
            "PCA reconstruction loss is defined on groups, not single samples",
        )),
        (_, LossData::Group(_)) => Err(TermError::input(format!(
            "{kind} loss is defined on single samples"
        ))),
        (_, LossData::Sample { features, target }) => sample_loss(kind, features, target, theta),
    }
}

/// Value and gradient of a per-sample loss. PCA is rejected here.
pub fn sample_loss(kind: LossKind, x: &[f64], y: f64, theta: &[f64]) -> Result<LossEval> {
    let want = kind.param_dim(x.len());
    if theta.len() != want {
        return Err(TermError::input(format!(
            "{kind} loss with {} features needs {want} parameters, got {}",
            x.len(),
            theta.len()
        )));
    }
    match kind {
        LossKind::Squared => {
            let r = y - affine(theta, x);
            let mut grad = Vec::with_capacity(want);
            grad.extend(x.iter().map(|xj| -2.0 * r * xj));
            grad.push(-2.0 * r);
            Ok(LossEval { value: r * r, grad })
        }
        LossKind::Logistic => {
            if y != 1.0 && y != -1.0 {
                return Err(TermError::input(format!(
                    "logistic label must be -1 or +1, got {y}"
                )));
            }
            let m = y * affine(theta, x);
            // f = log(1 + e^{-m}), df/dm = -sigmoid(-m)
            let (value, s) = if m >= 0.0 {
                let e = (-m).exp();
                (e.ln_1p(), e / (1.0 + e))
            } else {
                let e = m.exp();
                (-m + e.ln_1p(), 1.0 / (1.0 + e))
            };
            let mut grad = Vec::with_capacity(want);
            grad.extend(x.iter().map(|xj| -y * s * xj));
            grad.push(-y * s);
            Ok(LossEval { value, grad })
        }
        LossKind::SquaredDistance => {
            let mut value = 0.0;
            let mut grad = Vec::with_capacity(want);
            for (xj, tj) in x.iter().zip(theta) {
                let d = tj - xj;
                value += d * d;
                grad.push(2.0 * d);
            }
            Ok(LossEval { value, grad })
        }
        LossKind::PcaReconstruction { .. } => Err(TermError::input(
            "PCA reconstruction loss is defined on groups, not single samples",
        )),
    }
}

fn affine(theta: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for (w, xj) in theta.iter().zip(x) {
        s += w * xj;
    }
    s + theta[x.len()]
}

/// Central-difference gradient of an arbitrary scalar function.
pub fn fd_gradient_fn<F>(f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        p[j] = theta[j] + h;
        let up = f(&p);
        p[j] = theta[j] - h;
        let down = f(&p);
        p[j] = theta[j];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Central-difference gradient of a loss family; the test oracle for the analytic gradients.
pub fn fd_gradient(kind: LossKind, data: LossData<'_>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(TermError::input(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    // validate once so the closure can unwrap
    loss_value_and_grad(kind, data, theta)?;
    Ok(fd_gradient_fn(
        |p| {
            loss_value_and_grad(kind, data, p)
                .map(|e| e.value)
                .unwrap_or(f64::NAN)
        },
        theta,
        h,
    ))
}

// ---------------------------------------------------------------------------
// PCA

/// Configuration for the power iteration behind [`rank_r_approximation`].
#[derive(Debug, Clone, Copy)]
pub struct PowerIterOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        PowerIterOptions {
            tol: 1e-10,
            max_iters: 50_000,
        }
    }
}

/// Best rank-r approximation `X V V^T` of a data matrix.
#[derive(Debug, Clone)]
pub struct LowRank {
    /// Top right singular directions, column-major `d x r`.
    pub basis: Vec<f64>,
    /// Eigenvalues of `X^T X` (squared singular values), descending.
    pub eigenvalues: Vec<f64>,
    pub approximation: Vec<Vec<f64>>,
    /// `||X - X_hat||_F^2`
    pub residual_sq: f64,
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map(Vec::len).unwrap_or(0);
    if x.is_empty() || d == 0 {
        return Err(TermError::input("data matrix must be non-empty"));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(TermError::input(format!(
                "row {i} has {} columns, expected {d}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(TermError::input(format!("row {i} has non-finite entries")));
        }
    }
    Ok(d)
}

fn gram(x: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for row in x {
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] += row[i] * row[j];
            }
        }
    }
    a
}

fn matvec(a: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += a[i * d + j] * v[j];
        }
        out[i] = s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthogonalize_against(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi -= c * bi;
        }
    }
}

/// Deterministic start vector not aligned with coordinate axes.
fn start_vector(d: usize, k: usize) -> Vec<f64> {
    (0..d)
        .map(|j| 1.0 + 0.5 * ((j * 7 + k * 13 + 1) as f64).sin())
        .collect()
}

/// Rank-r approximation by power iteration on `X^T X` with deflation.
///
/// Each direction is iterated until `||A v - (v.A v) v|| <= tol * ||A||_F`.
pub fn rank_r_approximation(x: &[Vec<f64>], r: usize, opts: PowerIterOptions) -> Result<LowRank> {
    let d = check_matrix(x)?;
    let n = x.len();
    if r == 0 || r >= n.min(d) {
        return Err(TermError::Domain(format!(
            "rank must satisfy 1 <= r < min(n, d) = {}, got {r}",
            n.min(d)
        )));
    }
    let mut a = gram(x, d);
    let scale = norm(&a).max(f64::MIN_POSITIVE);
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut eigenvalues = Vec::with_capacity(r);
    let mut av = vec![0.0; d];

    for k in 0..r {
        let mut v = start_vector(d, k);
        orthogonalize_against(&mut v, &found);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);

        let mut converged = false;
        let mut residual = f64::INFINITY;
        let mut lambda = 0.0;
        for _ in 0..opts.max_iters {
            matvec(&a, &v, &mut av);
            lambda = dot(&v, &av);
            residual = av
                .iter()
                .zip(&v)
                .map(|(p, q)| (p - lambda * q).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= opts.tol * scale {
                converged = true;
                break;
            }
            orthogonalize_against(&mut av, &found);
            let nav = norm(&av);
            if nav <= opts.tol * scale {
                // Remaining spectrum is numerically zero; any orthogonal unit vector works.
                converged = true;
                lambda = 0.0;
                break;
            }
            for (vi, ai) in v.iter_mut().zip(&av) {
                *vi = ai / nav;
            }
        }
        if !converged {
            return Err(TermError::Numerical {
                message: format!(
                    "power iteration for direction {k} did not converge in {} iterations",
                    opts.max_iters
                ),
                residual: Some(residual / scale),
            });
        }
        // deflate
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        eigenvalues.push(lambda);
        found.push(v);
    }

    let mut basis = Vec::with_capacity(d * r);
    for v in &found {
        basis.extend_from_slice(v);
    }
    let approximation: Vec<Vec<f64>> = x.iter().map(|row| project_row(row, &basis, d, r)).collect();
    let residual_sq = reconstruction_error(x, &basis, d, r);
    Ok(LowRank {
        basis,
        eigenvalues,
        approximation,
        residual_sq,
    })
}

/// `U U^T x` for column-major `U` (`d x r`).
fn project_row(x: &[f64], u: &[f64], d: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for c in 0..r {
        let col = &u[c * d..(c + 1) * d];
        let coef = dot(x, col);
        for (o, uj) in out.iter_mut().zip(col) {
            *o += coef * uj;
        }
    }
    out
}

/// `||X - X U U^T||_F^2`, accumulated row by row.
fn reconstruction_error(x: &[Vec<f64>], u: &[f64], d: usize, r: usize) -> f64 {
    let mut s = 0.0;
    for row in x {
        let p = project_row(row, u, d, r);
        for (a, b) in row.iter().zip(&p) {
            s += (a - b) * (a - b);
        }
    }
    s
}

/// One group's data for the PCA loss, with its optimal residual cached.
#[derive(Debug, Clone)]
pub struct PcaGroup {
    x: Vec<Vec<f64>>,
    dim: usize,
    rank: usize,
    optimal_residual_sq: f64,
    optimal_basis: Vec<f64>,
}

impl PcaGroup {
    pub fn new(x: Vec<Vec<f64>>, rank: usize) -> Result<Self> {
        Self::with_options(x, rank, PowerIterOptions::default())
    }

    pub fn with_options(x: Vec<Vec<f64>>, rank: usize, opts: PowerIterOptions) -> Result<Self> {
        let low = rank_r_approximation(&x, rank, opts)?;
        let dim = x[0].len();
        Ok(PcaGroup {
            x,
            dim,
            rank,
            optimal_residual_sq: low.residual_sq,
            optimal_basis: low.basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn optimal_basis(&self) -> &[f64] {
        &self.optimal_basis
    }

    pub fn optimal_residual_sq(&self) -> f64 {
        self.optimal_residual_sq
    }

    /// `(1/n)(||X - X U U^T||^2 - ||X - X_hat||^2)` and its exact gradient in `U`
    /// (no orthonormality assumed): `-(2/n) (G + G^T) U` with `G = X^T (X - X U U^T)`.
    pub fn loss(&self, theta: &[f64]) -> Result<LossEval> {
        let (d, r) = (self.dim, self.rank);
        if theta.len() != d * r {
            return Err(TermError::input(format!(
                "PCA parameter must have {} entries (d={d}, r={r}), got {}",
                d * r,
                theta.len()
            )));
        }
        let n = self.x.len() as f64;
        let mut err = 0.0;
        let mut g = vec![0.0; d * d];
        for row in &self.x {
            let p = project_row(row, theta, d, r);
            for i in 0..d {
                let ri = row[i] - p[i];
                err += ri * ri;
                for j in 0..d {
                    // G[j][i] += x_j * res_i
                    g[j * d + i] += row[j] * ri;
                }
            }
        }
        let mut grad = vec![0.0; d * r];
        for c in 0..r {
            let col = &theta[c * d..(c + 1) * d];
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += (g[i * d + j] + g[j * d + i]) * col[j];
                }
                grad[c * d + i] = -2.0 * s / n;
            }
        }
        Ok(LossEval {
            value: (err - self.optimal_residual_sq) / n,
            grad,
        })
    }
}

/// Modified Gram-Schmidt on the columns of a column-major `d x r` matrix.
pub fn orthonormalize_columns(u: &mut [f64], d: usize, r: usize) -> Result<()> {
    for c in 0..r {
        for p in 0..c {
            let (head, tail) = u.split_at_mut(c * d);
            let prev = &head[p * d..(p + 1) * d];
            let col = &mut tail[..d];
            let coef = dot(col, prev);
            for (x, y) in col.iter_mut().zip(prev) {
                *x -= coef * y;
            }
        }
        let col = &mut u[c * d..(c + 1) * d];
        let nc = norm(col);
        if !(nc > 1e-300) || !nc.is_finite() {
            return Err(TermError::numerical(format!(
                "column {c} became degenerate during re-orthonormalization"
            )));
        }
        col.iter_mut().for_each(|x| *x /= nc);
    }
    Ok(())
}

/// `||U^T U - I||_F` for a column-major `d x r` matrix.
pub fn orthonormality_error(u: &[f64], d: usize, r: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..r {
        for b in 0..r {
            let v = dot(&u[a * d..(a + 1) * d], &u[b * d..(b + 1) * d])
                - if a == b { 1.0 } else { 0.0 };
            s += v * v;
        }
    }
    s.sqrt()
}
