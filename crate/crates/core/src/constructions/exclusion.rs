//! Iterative extraction of the `r_max` most important positions with a
//! softmax over importances, masking each recorded position with a
//! positional Gaussian bump before the next round.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, SequenceTensor};

/// Bits of precision `T` used by [`exclusion_temperature`] when callers do
/// not choose one.
pub const DEFAULT_PRECISION_BITS: u32 = 20;

/// `χ_T = (T ln 2 + 2 ln V) · r_max^β / c`.
pub fn exclusion_temperature(bits: u32, v: usize, r_max: usize, c: f64, beta: f64) -> f64 {
    let v = v.max(1) as f64;
    (bits as f64 * std::f64::consts::LN_2 + 2.0 * v.ln()) * (r_max as f64).powf(beta) / c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSelector {
    pub r_max: usize,
    pub chi: f64,
    /// Temperature of the masking bump, `V′² ln 2^T` with `V′ = V + 1`.
    pub mask_kappa: f64,
    pub recorded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionResult {
    pub selector: ExclusionSelector,
    /// Recorded positions in extraction order.
    pub indices: Vec<usize>,
    /// D×r_max, the softly gathered feature columns.
    pub columns: Matrix,
    /// `Σ_j w_j sin(πj/(4V))` per round, the encoded position before decoding.
    pub encoded_positions: Vec<f64>,
    /// Whether `chi` reaches the temperature required by `(c, β)`.
    pub certified: bool,
}

/// Runs `r_max` rounds over positions `0..=V`. Round `m` takes a softmax of
/// `chi·importance` weighted by `1 − Σ_{m′<m} bump(ĵ_{m′})`, reads the
/// position from the weighted average of `sin(πj/(4V))` with an exact
/// arcsin, and gathers the weighted feature column.
pub fn exclusion_select(
    features: &SequenceTensor,
    importance: &[f64],
    r_max: usize,
    chi: f64,
    c: f64,
    beta: f64,
) -> Result<ExclusionResult> {
    let n = importance.len();
    if features.t() != n {
        return shape_err(format!("{} importances for {} positions", n, features.t()));
    }
    if r_max > n {
        return Err(Error::InvalidArgument(format!("cannot extract {r_max} of {n} positions")));
    }
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {chi}")));
    }
    if importance.iter().any(|m| !(-1.0..=0.0).contains(m)) {
        return Err(Error::InvalidArgument("importances must lie in [-1, 0]".into()));
    }
    let v = n - 1;
    let v_prime = (v + 1) as f64;
    let mask_kappa = v_prime * v_prime * DEFAULT_PRECISION_BITS as f64 * std::f64::consts::LN_2;
    let scale = if v == 0 { 0.0 } else { PI / (4.0 * v as f64) };
    let mut mask = vec![1.0f64; n];
    let mut indices = Vec::with_capacity(r_max);
    let mut encoded = Vec::with_capacity(r_max);
    let mut columns = Matrix::zeros(features.d(), r_max);
    for round in 0..r_max {
        let logits: Vec<f64> = importance
            .iter()
            .zip(&mask)
            .map(|(mu, m)| if *m > 0.0 { chi * mu + m.ln() } else { f64::NEG_INFINITY })
            .collect();
        let top = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let mut w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= z);
        let p: f64 = w.iter().enumerate().map(|(j, wj)| wj * (scale * j as f64).sin()).sum();
        let j_hat = if v == 0 { 0 } else { (p.clamp(-1.0, 1.0).asin() / scale).round().clamp(0.0, v as f64) as usize };
        for (i, col) in (0..features.d()).map(|i| (i, features.matrix().row(i))) {
            columns[(i, round)] = col.iter().zip(&w).map(|(a, b)| a * b).sum();
        }
        for (j, m) in mask.iter_mut().enumerate() {
            let s = (PI * (j as f64 - j_hat as f64) / (2.0 * v_prime)).sin();
            *m -= (-mask_kappa * s * s).exp();
            if *m < 1e-300 {
                *m = 0.0;
            }
        }
        indices.push(j_hat);
        encoded.push(p);
    }
    let required = exclusion_temperature(DEFAULT_PRECISION_BITS, v, r_max, c, beta);
    let selector = ExclusionSelector { r_max, chi, mask_kappa, recorded: indices.clone() };
    Ok(ExclusionResult { selector, indices, columns, encoded_positions: encoded, certified: chi >= required })
}
