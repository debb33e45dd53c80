use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::{Matrix, RngStream, SequenceTensor};

/// `ψ_r(x)`: `√2 cos(2π|r|x)` for r < 0, `√2 sin(2πrx)` for r > 0 and the
/// constant 1 for r = 0, so that the family is orthonormal on [0, 1].
pub fn psi_basis_eval(r: i64, x: f64) -> f64 {
    match r {
        0 => 1.0,
        r if r < 0 => SQRT_2 * (2.0 * PI * (-r) as f64 * x).cos(),
        r => SQRT_2 * (2.0 * PI * r as f64 * x).sin(),
    }
}

/// Importance of the prefix ending at a position; values lie in [−1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Importance {
    /// `table[b]` where `b` is the bucket of the last token's first
    /// coordinate among `table.len()` equal buckets of [0, 1].
    LastTokenTable(Vec<f64>),
    /// `Σ c·ψ_r(x_t[0])·ψ_s(x_{t−1}[0]) / Σ 2|c|` over `(r, s, c)` terms; the
    /// token before the start counts as 0.
    TrigLastTwo(Vec<(i64, i64, f64)>),
}

impl Importance {
    /// `μ(X_t)`; only columns `..=t` are read.
    pub fn eval(&self, x: &SequenceTensor, t: usize) -> f64 {
        match self {
            Importance::LastTokenTable(table) => {
                let n = table.len();
                let b = ((x[(0, t)] * n as f64).floor().max(0.0) as usize).min(n - 1);
                table[b]
            }
            Importance::TrigLastTwo(terms) => {
                let cur = x[(0, t)];
                let prev = if t > 0 { x[(0, t - 1)] } else { 0.0 };
                let norm: f64 = terms.iter().map(|(_, _, c)| 2.0 * c.abs()).sum();
                if norm == 0.0 {
                    return 0.0;
                }
                terms.iter().map(|(r, s, c)| c * psi_basis_eval(*r, cur) * psi_basis_eval(*s, prev)).sum::<f64>() / norm
            }
        }
    }
}

/// Permutation sorting positions by ascending importance (ties keep the
/// original order) and the correspondingly gathered columns.
pub fn importance_sort(x: &SequenceTensor, mu: &dyn Fn(&SequenceTensor, usize) -> f64) -> (Vec<usize>, SequenceTensor) {
    let scores: Vec<f64> = (0..x.t()).map(|t| mu(x, t)).collect();
    let mut perm: Vec<usize> = (0..x.t()).collect();
    perm.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let sorted = SequenceTensor::from_fn(x.d(), x.t(), |i, j| x[(i, perm[j])]);
    (perm, sorted)
}

/// `coeff · Π ψ_r(Π(X)[coord, pos])` over the listed factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub coeff: f64,
    /// `(sorted position, coordinate, r)`.
    pub factors: Vec<(usize, usize, i64)>,
}

/// `g = f ∘ Π`: a finite trigonometric expansion `f` evaluated on the tokens
/// sorted by importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseTarget {
    pub d: usize,
    /// Positions `0..=v`.
    pub v: usize,
    pub constant: f64,
    pub terms: Vec<SmoothTerm>,
    pub importance: Importance,
    pub noise_sigma: f64,
    /// Separation constants: sorted importances should differ by at least
    /// `c·i^{−β}` between ranks i and i+1.
    pub c: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub x: SequenceTensor,
    pub y: f64,
}

impl PiecewiseTarget {
    pub fn constant(d: usize, v: usize, value: f64) -> Self {
        Self {
            d,
            v,
            constant: value,
            terms: vec![],
            importance: Importance::LastTokenTable(vec![0.0]),
            noise_sigma: 0.0,
            c: 0.0,
            beta: 1.0,
        }
    }

    pub fn eval(&self, x: &SequenceTensor) -> Result<f64> {
        if x.d() != self.d || x.t() != self.v + 1 {
            return shape_err(format!("target expects {}×{}, got {}×{}", self.d, self.v + 1, x.d(), x.t()));
        }
        let (_, sorted) = importance_sort(x, &|x, t| self.importance.eval(x, t));
        let mut y = self.constant;
        for term in &self.terms {
            let mut p = term.coeff;
            for &(pos, coord, r) in &term.factors {
                p *= psi_basis_eval(r, sorted[(coord, pos)]);
            }
            y += p;
        }
        Ok(y)
    }

    /// Whether consecutive sorted importances of `x` (largest first) differ by
    /// at least `c·i^{−β}`.
    pub fn is_well_separated(&self, x: &SequenceTensor) -> bool {
        let mut s: Vec<f64> = (0..x.t()).map(|t| self.importance.eval(x, t)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s.windows(2).enumerate().all(|(i, w)| w[0] - w[1] >= self.c * ((i + 1) as f64).powf(-self.beta))
    }
}

/// `n` samples with tokens i.i.d. uniform on `[0,1]^d` and
/// `Y = g(X) + σξ`, `ξ ~ N(0, 1)`.
pub fn gen_piecewise_regression(target: &PiecewiseTarget, n: usize, rng: &mut RngStream) -> Result<Vec<RegressionSample>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let m = Matrix::from_fn(target.d, target.v + 1, |_, _| rng.unit());
        let x = SequenceTensor::new(m)?;
        let mut y = target.eval(&x)?;
        if target.noise_sigma > 0.0 {
            y += target.noise_sigma * rng.normal();
        }
        out.push(RegressionSample { x, y });
    }
    Ok(out)
}
