//! Separable expansion of the periodic Gaussian kernel
//! `k(t, x) = exp(−κ sin²(π(t−x)/2))` into `cos(πf t)cos(πf x) + sin(πf t)sin(πf x)`
//! terms, and the positional delta filters built from it.
//!
//! The expansion coefficients are the converged Fourier coefficients of the
//! kernel, `e^{−κ/2} I_f(κ/2)` (doubled for f ≥ 1), computed on a fine
//! periodic grid. Truncating the Taylor series of `exp` at `N` terms before
//! expanding `sin^{2n}` (see [`taylor_table`]) yields the same coefficients
//! only when `κ` is small compared with `N`; for large `κ` the truncated
//! table is dominated by cancelling terms of size `κ^N/N!`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConvLayer;
use crate::numerics::{complex_fft, FftDirection, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTerm {
    pub frequency: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLowRank {
    pub kappa: f64,
    pub epsilon: f64,
    /// `max{⌈2e ln(3/ε)⌉, ⌈log2(3/ε)⌉}`.
    pub term_count: usize,
    pub c0: f64,
    /// Frequencies 1.. in increasing order.
    pub terms: Vec<FrequencyTerm>,
}

pub fn term_count_for(epsilon: f64) -> usize {
    let a = (3.0 / epsilon).ln();
    let first = (2.0 * std::f64::consts::E * a).ceil();
    let second = (3.0 / epsilon).log2().ceil();
    first.max(second) as usize
}

/// Cosine-series coefficients `a_f` of `exp(−κ sin²(πu/2))` (period 2 in u)
/// for f = 0..n/2, from `n` equispaced samples.
fn kernel_fourier(kappa: f64, n: usize) -> Result<Vec<f64>> {
    let samples: Vec<Complex64> = (0..n)
        .map(|i| {
            let u = 2.0 * i as f64 / n as f64;
            let s = (PI * u / 2.0).sin();
            Complex64::new((-kappa * s * s).exp(), 0.0)
        })
        .collect();
    let spectrum = complex_fft(&samples, FftDirection::Forward)?;
    Ok((0..=n / 2)
        .map(|f| {
            let a = spectrum[f].re / n as f64;
            if f == 0 || f == n / 2 {
                a
            } else {
                2.0 * a
            }
        })
        .collect())
}

pub fn gaussian_lowrank_build(kappa: f64, epsilon: f64) -> Result<GaussianLowRank> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let n_terms = term_count_for(epsilon);
    // Coefficients decay like exp(−f²/κ); this grid leaves the folded-back
    // part below double precision.
    let grid = (4.0 * ((40.0 * kappa).sqrt() + 40.0) + 4.0 * n_terms as f64) as usize;
    let grid = grid.next_power_of_two().max(64);
    let a = kernel_fourier(kappa, grid)?;
    // Keep at least N frequencies, more if the discarded tail would exceed ε.
    let mut tail = vec![0.0; a.len() + 1];
    for f in (0..a.len()).rev() {
        tail[f] = tail[f + 1] + a[f].abs();
    }
    let mut keep = n_terms.min(a.len());
    while keep < a.len() && tail[keep] > epsilon {
        keep += 1;
    }
    let terms = (1..keep).map(|f| FrequencyTerm { frequency: f, coeff: a[f] }).collect();
    Ok(GaussianLowRank { kappa, epsilon, term_count: n_terms, c0: a[0], terms })
}

impl GaussianLowRank {
    pub fn exact(&self, t: f64, x: f64) -> f64 {
        let s = (PI / 2.0 * (t - x)).sin();
        (-self.kappa * s * s).exp()
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.c0
            + self
                .terms
                .iter()
                .map(|term| {
                    let w = PI * term.frequency as f64;
                    term.coeff * ((w * t).cos() * (w * x).cos() + (w * t).sin() * (w * x).sin())
                })
                .sum::<f64>()
    }

    /// `g_n(t)`: `[1, cos(πf₁t), sin(πf₁t), cos(πf₂t), …]`.
    pub fn eval_separated(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 2 * self.terms.len());
        out.push(1.0);
        for term in &self.terms {
            let w = PI * term.frequency as f64;
            out.push((w * t).cos());
            out.push((w * t).sin());
        }
        out
    }

    /// `h_n(x)` paired with [`GaussianLowRank::eval_separated`].
    pub fn factors(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 2 * self.terms.len());
        out.push(self.c0);
        for term in &self.terms {
            let w = PI * term.frequency as f64;
            out.push(term.coeff * (w * x).cos());
            out.push(term.coeff * (w * x).sin());
        }
        out
    }

    pub fn rank(&self) -> usize {
        1 + 2 * self.terms.len()
    }

    /// Coefficients folded onto integer taps with normalizer `u_prime`:
    /// on `t = j/U′` with integer j, frequency f and `2U′ − f` coincide, so
    /// `Σ_f C_f cos(πf(j−p)/U′) = Σ_{g=0}^{U′} F_g cos(πg(j−p)/U′)`.
    pub fn fold(&self, u_prime: usize) -> Vec<f64> {
        let period = 2 * u_prime;
        let mut folded = vec![0.0; u_prime + 1];
        folded[0] += self.c0;
        for term in &self.terms {
            let g = term.frequency % period;
            let g = g.min(period - g);
            folded[g] += term.coeff;
        }
        folded
    }
}

/// One entry of the truncated Taylor-times-Fourier table:
/// `(−κ)^n/n! · sin^{2n}` expanded, contributing `coeff·cos(πf u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorTerm {
    pub n: usize,
    pub k: usize,
    pub frequency: usize,
    pub coeff: f64,
}

/// Table of `exp(−κ s²) ≈ Σ_{n<N} (−κ)^n/n! · s^{2n}` with
/// `sin^{2n}(y) = 4^{−n}[C(2n,n) + 2 Σ_{k>n} (−1)^{n+k} C(2n,k) cos(2(k−n)y)]`,
/// evaluated at `y = π(t−x)/2`, so frequency `f = k − n`.
pub fn taylor_table(kappa: f64, n_terms: usize) -> Vec<TaylorTerm> {
    let mut out = Vec::new();
    let mut power = 1.0; // (−κ)^n / n!
    for n in 0..n_terms {
        if n > 0 {
            power *= -kappa / n as f64;
        }
        let scale = power / 4f64.powi(n as i32);
        let mut binom = 1.0; // C(2n, k)
        for k in 0..=2 * n {
            if k > 0 {
                binom *= (2 * n + 1 - k) as f64 / k as f64;
            }
            if k == n {
                out.push(TaylorTerm { n, k, frequency: 0, coeff: scale * binom });
            } else if k > n {
                let sign = if (n + k) % 2 == 0 { 1.0 } else { -1.0 };
                out.push(TaylorTerm { n, k, frequency: k - n, coeff: 2.0 * sign * scale * binom });
            }
        }
    }
    out
}

/// Samples of a Gaussian bump centred on tap `j_star` over taps 0..=U.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalDelta {
    pub j_star: usize,
    pub window: usize,
    pub u_prime: usize,
    pub kappa: f64,
    pub taps: Vec<f64>,
}

/// `k(j) = exp(−κ sin²(π(j − j*)/(2U′)))` with `κ = U′² ln(1/ε)`, `U′ = U+1`.
/// Equals one at `j*` and at most ε elsewhere.
pub fn positional_delta_filter(j_star: usize, window: usize, epsilon: f64) -> Result<PositionalDelta> {
    if j_star > window {
        return Err(Error::InvalidArgument(format!("target tap {j_star} outside window 0..={window}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let u_prime = window + 1;
    let kappa = (u_prime * u_prime) as f64 * (1.0 / epsilon).ln();
    let taps = (0..=window)
        .map(|j| {
            let s = (PI / 2.0 * (j as f64 - j_star as f64) / u_prime as f64).sin();
            (-kappa * s * s).exp()
        })
        .collect();
    Ok(PositionalDelta { j_star, window, u_prime, kappa, taps })
}

/// Filter parameters of a multi-channel realization of a delta filter.
/// Summing the channel filters reproduces the kernel at the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaChannels {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub window: usize,
}

impl DeltaChannels {
    pub fn len(&self) -> usize {
        self.c1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c1.is_empty()
    }

    /// Layer that copies input channel 0 into every channel and applies the
    /// channel filters.
    pub fn into_conv_layer(self) -> ConvLayer {
        let d = self.len();
        let mut w = Matrix::zeros(d, d);
        for k in 0..d {
            w[(k, 0)] = 1.0;
        }
        ConvLayer { w_mix: w, c1: self.c1, c2: self.c2, a1: self.a1, a2: self.a2, window: self.window }
    }
}

/// One cosine and one sine channel per retained frequency, with the
/// low-rank factors evaluated at `x = j*/U′`. Parameter `a = f/2` turns the
/// filter's `2πj a/U′` into `πf j/U′`, i.e. the kernel at `t = j/U′`.
pub fn realize_as_conv_channels(glr: &GaussianLowRank, j_star: usize, window: usize) -> Result<DeltaChannels> {
    if j_star > window {
        return Err(Error::InvalidArgument(format!("target tap {j_star} outside window 0..={window}")));
    }
    let x = j_star as f64 / (window + 1) as f64;
    let h = glr.factors(x);
    let mut ch = DeltaChannels { c1: vec![], c2: vec![], a1: vec![], a2: vec![], window };
    ch.c1.push(h[0]);
    ch.a1.push(0.0);
    ch.c2.push(0.0);
    ch.a2.push(0.0);
    for (i, term) in glr.terms.iter().enumerate() {
        let a = term.frequency as f64 / 2.0;
        ch.c1.push(h[1 + 2 * i]);
        ch.a1.push(a);
        ch.c2.push(0.0);
        ch.a2.push(0.0);
        ch.c1.push(0.0);
        ch.a1.push(0.0);
        ch.c2.push(h[2 + 2 * i]);
        ch.a2.push(a);
    }
    Ok(ch)
}
