//! Tilted aggregation of per-sample losses.
//!
//! For losses `f_1..f_N` and a tilt `t`, the tilted objective is
//! `(1/t) * log((1/N) * sum_i exp(t * f_i))`, with the continuous extension
//! (the arithmetic mean) at `t == 0`. Every routine here works on the shifted
//! exponents `t*f_i - max_j(t*f_j)`, so nothing overflows as long as the
//! shifted terms are representable; the unshifted products `|t*f_i|` may go
//! well past 700.
//!
//! All reductions accumulate left to right over the sample index. Traces
//! built on top of these functions are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TermError};

/// Per-sample losses for one fixed parameter. Non-empty, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(TermError::input("loss vector must have at least one entry"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TermError::input(format!(
                "loss entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(LossVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Copy of the entries at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<LossVector> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            out.push(*self.0.get(i).ok_or_else(|| {
                TermError::input(format!(
                    "index {i} out of range for {} losses",
                    self.0.len()
                ))
            })?);
        }
        LossVector::new(out)
    }
}

impl TryFrom<Vec<f64>> for LossVector {
    type Error = TermError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LossVector::new(v)
    }
}

impl From<LossVector> for Vec<f64> {
    fn from(v: LossVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for LossVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A finite tilt value. `Tilt::ERM` (zero) selects the plain average.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Tilt(f64);

impl Tilt {
    pub const ERM: Tilt = Tilt(0.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() {
            Ok(Tilt(t))
        } else {
            Err(TermError::input(format!("tilt must be finite, got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_erm(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Tilt {
    type Error = TermError;

    fn try_from(t: f64) -> Result<Self> {
        Tilt::new(t)
    }
}

impl From<Tilt> for f64 {
    fn from(t: Tilt) -> f64 {
        t.0
    }
}

/// Normalized exponential sample weights. Entries in `[0, 1]`, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltWeights(Vec<f64>);

impl TiltWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Shannon entropy in nats, with `0 * log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for &w in &self.0 {
            if w > 0.0 {
                h -= w * w.ln();
            }
        }
        h
    }
}

/// Row-major matrix of per-sample gradients: `rows` samples, `dim` coordinates each.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GradientMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        GradientMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(TermError::input("gradient rows must have dimension >= 1"));
        }
        let n = rows.len();
        let mut data = Vec::with_capacity(n * dim);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != dim {
                return Err(TermError::input(format!(
                    "gradient row {i} has dimension {}, expected {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(TermError::input(format!(
                    "gradient row {i} has non-finite entries"
                )));
            }
            data.extend(r);
        }
        Ok(GradientMatrix { rows: n, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Minimum, mean and maximum of a loss vector.
///
/// Tied extremes are averaged over their achievers, which is just the tied
/// value, so no special casing is needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossExtremes {
    pub min_loss: f64,
    pub avg_loss: f64,
    pub max_loss: f64,
}

fn mean(values: &[f64]) -> f64 {
    let mut s = 0.0;
    for &v in values {
        s += v;
    }
    s / values.len() as f64
}

/// `log((1/N) sum exp(z_i))` for a non-empty slice, using the max shift and
/// `ln_1p(mean(expm1(z_i - m)))`, which stays accurate when all `z_i` are
/// close together (tiny tilts).
pub(crate) fn log_mean_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for &zi in z {
        s += (zi - m).exp_m1();
    }
    m + (s / z.len() as f64).ln_1p()
}

/// `(1/t) log(sum_i p_i exp(t v_i))` for probability weights `p` summing to
/// one; the weighted mean at `t == 0`.
pub(crate) fn weighted_tilted_value(values: &[f64], probs: &[f64], t: f64) -> f64 {
    debug_assert_eq!(values.len(), probs.len());
    if t == 0.0 {
        let mut s = 0.0;
        for (v, p) in values.iter().zip(probs) {
            s += p * v;
        }
        return s;
    }
    let m = values
        .iter()
        .map(|v| t * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (v, p) in values.iter().zip(probs) {
        s += p * (t * v - m).exp_m1();
    }
    (m + s.ln_1p()) / t
}

/// Normalized `p_i exp(t v_i)`. Equals `probs` (renormalized) at `t == 0`.
pub(crate) fn weighted_softmax(values: &[f64], probs: &[f64], t: f64) -> Vec<f64> {
    let z: Vec<f64> = values
        .iter()
        .zip(probs)
        .map(|(v, p)| {
            if *p > 0.0 {
                t * v + p.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = z.iter().map(|zi| (zi - m).exp()).collect();
    let mut s = 0.0;
    for &ei in &e {
        s += ei;
    }
    for ei in &mut e {
        *ei /= s;
    }
    e
}

pub(crate) fn tilted_value_raw(losses: &[f64], t: f64) -> f64 {
    if t == 0.0 {
        return mean(losses);
    }
    let z: Vec<f64> = losses.iter().map(|f| t * f).collect();
    log_mean_exp(&z) / t
}

pub(crate) fn softmax_raw(losses: &[f64], t: f64) -> Vec<f64> {
    let n = losses.len();
    if t == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let m = losses
        .iter()
        .map(|f| t * f)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = losses.iter().map(|f| (t * f - m).exp()).collect();
    let mut s = 0.0;
    for &ei in &e {
        s += ei;
    }
    for ei in &mut e {
        *ei /= s;
    }
    e
}

/// The t-tilted loss. Arithmetic mean at `t == 0`.
pub fn tilted_objective(losses: &LossVector, t: Tilt) -> f64 {
    tilted_value_raw(losses.as_slice(), t.value())
}

/// Exponential tilt weights `exp(t f_i) / sum_j exp(t f_j)`; uniform at `t == 0`.
pub fn tilt_weights(losses: &LossVector, t: Tilt) -> TiltWeights {
    TiltWeights(softmax_raw(losses.as_slice(), t.value()))
}

/// `sum_i w_i(t) * grad_i`, accumulated over `i` in ascending order.
pub fn tilted_gradient(grads: &GradientMatrix, losses: &LossVector, t: Tilt) -> Result<Vec<f64>> {
    if grads.rows() != losses.len() {
        return Err(TermError::input(format!(
            "{} gradient rows for {} losses",
            grads.rows(),
            losses.len()
        )));
    }
    let w = tilt_weights(losses, t);
    Ok(weighted_row_sum(grads, w.as_slice()))
}

/// `sum_i coef_i * row_i`, ascending `i`. Shared by every solver path so that
/// equal coefficients give bitwise-equal directions.
pub(crate) fn weighted_row_sum(grads: &GradientMatrix, coef: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grads.dim()];
    for (i, &c) in coef.iter().enumerate() {
        for (o, g) in out.iter_mut().zip(grads.row(i)) {
            *o += c * g;
        }
    }
    out
}

pub fn extreme_losses(losses: &LossVector) -> LossExtremes {
    let v = losses.as_slice();
    LossExtremes {
        min_loss: v.iter().copied().fold(f64::INFINITY, f64::min),
        avg_loss: mean(v),
        max_loss: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Empirical cumulant generating function `t * tilted_objective`; zero at `t == 0`.
pub fn cumulant(losses: &LossVector, t: Tilt) -> f64 {
    if t.is_erm() {
        return 0.0;
    }
    let z: Vec<f64> = losses.as_slice().iter().map(|f| t.value() * f).collect();
    log_mean_exp(&z)
}
