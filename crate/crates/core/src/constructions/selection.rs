use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, SequenceTensor};

/// Parameters of a certified selection: with gap `delta` between the best
/// and every other key score, the output is within `epsilon` of the best
/// value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSelector {
    pub d_prime: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub a_scale: f64,
    /// Context length: positions 0..=v compete.
    pub v: usize,
}

impl KernelSelector {
    /// Smallest temperature with `2(V+1)² e^{−δκ/2} ≤ ε`.
    pub fn default_kappa(delta: f64, epsilon: f64, v: usize) -> f64 {
        let n = v as f64 + 1.0;
        (2.0 / delta) * (2.0 * n * n / epsilon).ln()
    }

    pub fn new(d_prime: usize, delta: f64, epsilon: f64, v: usize) -> Result<Self> {
        Self::with_kappa(d_prime, delta, epsilon, v, Self::default_kappa(delta, epsilon, v))
    }

    /// Selector with an explicit temperature. It need not meet the
    /// certification inequality; see [`KernelSelector::is_certified`].
    pub fn with_kappa(d_prime: usize, delta: f64, epsilon: f64, v: usize, kappa: f64) -> Result<Self> {
        if d_prime == 0 {
            return Err(Error::InvalidArgument("key dimension must be positive".into()));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("gap must be positive, got {delta}")));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1], got {epsilon}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {kappa}")));
        }
        let a_scale = (16.0 * PI * PI * d_prime as f64 / delta).sqrt();
        Ok(Self { d_prime, delta, epsilon, kappa, a_scale, v })
    }

    pub fn is_certified(&self) -> bool {
        self.kappa >= Self::default_kappa(self.delta, self.epsilon, self.v) * (1.0 - 1e-12)
    }

    /// `2(V+1)² e^{−δκ/2}`.
    pub fn selection_bound(&self) -> f64 {
        let n = self.v as f64 + 1.0;
        2.0 * n * n * (-self.delta * self.kappa / 2.0).exp()
    }

    /// `4d′π²/A²`, which equals δ/4 for the default scale.
    pub fn surrogate_bound(&self) -> f64 {
        4.0 * self.d_prime as f64 * PI * PI / (self.a_scale * self.a_scale)
    }
}

/// `μ′_j = ½‖q‖² + ½‖k_j‖² − (2/π²) Σ_i (A sin(π(k_ji − q_i)/(2A)))²`, an
/// approximation of `qᵀk_j` built only from squares and sines.
/// `keys` is d′×(V+1), one key per column.
pub fn surrogate_scores(q: &[f64], keys: &Matrix, a_scale: f64) -> Result<Vec<f64>> {
    if keys.rows() != q.len() {
        return shape_err(format!("query has dimension {}, keys have {}", q.len(), keys.rows()));
    }
    let qq: f64 = q.iter().map(|v| v * v).sum::<f64>() * 0.5;
    let c = 2.0 / (PI * PI);
    let w = PI / (2.0 * a_scale);
    let mut out = vec![qq; keys.cols()];
    for (i, qi) in q.iter().enumerate() {
        for (j, kij) in keys.row(i).iter().enumerate() {
            let s = a_scale * (w * (kij - qi)).sin();
            out[j] += 0.5 * kij * kij - c * s * s;
        }
    }
    Ok(out)
}

/// Same scores for keys given as a list of vectors.
pub(crate) fn surrogate_scores_vecs(q: &[f64], keys: &[Vec<f64>], a_scale: f64) -> Vec<f64> {
    let qq: f64 = q.iter().map(|v| v * v).sum::<f64>() * 0.5;
    let c = 2.0 / (PI * PI);
    let w = PI / (2.0 * a_scale);
    keys.iter()
        .map(|k| {
            let mut acc = qq;
            for (kij, qi) in k.iter().zip(q) {
                let s = a_scale * (w * (kij - qi)).sin();
                acc += 0.5 * kij * kij - c * s * s;
            }
            acc
        })
        .collect()
}

/// Softmax weights `exp(κμ_j)/Σ exp(κμ_i)` with the maximum subtracted.
pub(crate) fn softmax_weights(scores: &[f64], kappa: f64) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut w: Vec<f64> = scores.iter().map(|s| (kappa * (s - max)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// `Σ_j softmax(κμ′)_j v_j` with values given as columns of a d×(V+1) matrix.
pub fn kernel_select(scores: &[f64], values: &Matrix, kappa: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty context".into()));
    }
    if values.cols() != scores.len() {
        return shape_err(format!("{} scores but {} value columns", scores.len(), values.cols()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let w = softmax_weights(scores, kappa);
    values.matvec(&w)
}

/// Layout: rows `[q-block (d′) | key block (d′) | value block (d)]`,
/// columns are positions 0..=V. The query is read from the last column;
/// the query block of earlier columns is ignored padding.
pub fn dynamic_token_select(x: &SequenceTensor, selector: &KernelSelector) -> Result<Vec<f64>> {
    let dp = selector.d_prime;
    if x.d() <= 2 * dp {
        return shape_err(format!(
            "layout needs more than {} rows for key dimension {dp}, got {}",
            2 * dp,
            x.d()
        ));
    }
    let m = x.matrix();
    let last = x.t() - 1;
    let q: Vec<f64> = (0..dp).map(|i| m[(i, last)]).collect();
    let keys = Matrix::from_fn(dp, x.t(), |i, j| m[(dp + i, j)]);
    let d = x.d() - 2 * dp;
    let values = Matrix::from_fn(d, x.t(), |i, j| m[(2 * dp + i, j)]);
    let scores = surrogate_scores(&q, &keys, selector.a_scale)?;
    kernel_select(&scores, &values, selector.kappa)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `Σ_i |softmax(θ)_i − δ_{i,i*}|`.
    pub gap: f64,
    /// `2d e^{−δ}`.
    pub bound: f64,
    pub holds: bool,
    /// Runner-up margin δ.
    pub margin: f64,
    pub argmax: usize,
}

fn margin_and_argmax(theta: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in theta.iter().enumerate() {
        if *v > theta[best] {
            best = i;
        }
    }
    let runner = theta
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .fold(f64::NEG_INFINITY, |m, (_, v)| m.max(*v));
    (best, theta[best] - runner)
}

pub fn softmax_hardmax_gap(theta: &[f64]) -> GapReport {
    let (argmax, margin) = margin_and_argmax(theta);
    let w = softmax_weights(theta, 1.0);
    let gap = w
        .iter()
        .enumerate()
        .map(|(i, p)| if i == argmax { (1.0 - p).abs() } else { p.abs() })
        .sum();
    let bound = 2.0 * theta.len() as f64 * (-margin).exp();
    GapReport { gap, bound, holds: gap <= bound, margin, argmax }
}

/// `|Σ_i softmax(θ)_i x_i − x_{i*}|` against `2d² e^{−δ}` for `x ∈ [0,1]^d`.
pub fn weighted_softmax_gap(theta: &[f64], x: &[f64]) -> Result<GapReport> {
    if x.len() != theta.len() {
        return shape_err("value vector length differs from score length");
    }
    let (argmax, margin) = margin_and_argmax(theta);
    let w = softmax_weights(theta, 1.0);
    let avg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
    let gap = (avg - x[argmax]).abs();
    let d = theta.len() as f64;
    let bound = 2.0 * d * d * (-margin).exp();
    Ok(GapReport { gap, bound, holds: gap <= bound, margin, argmax })
}
