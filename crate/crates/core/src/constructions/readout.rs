//! Second-block token map of the constructed solvers. The preceding
//! convolution is a bank of DFT filters over the whole window, so every
//! lagged feature is a fixed linear function of the channels at the last
//! position. The readout reconstructs those lags, forms keys, query and
//! values, and performs the surrogate-score kernel selection with exact
//! scalar arithmetic.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::selection::{softmax_weights, surrogate_scores_vecs, KernelSelector};
use crate::error::{shape_err, Result};
use crate::numerics::{Matrix, SequenceTensor};

/// Real DFT filters over taps `0..=window`. Per feature there are
/// `U′ = window + 1` channels: cosines of frequency `g = 0..=⌊U′/2⌋`
/// followed by sines of frequency `g = 1..⌈U′/2⌉`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagBank {
    pub window: usize,
}

impl LagBank {
    pub fn new(window: usize) -> Self {
        Self { window }
    }

    pub fn u_prime(&self) -> usize {
        self.window + 1
    }

    pub fn channels_per_feature(&self) -> usize {
        self.u_prime()
    }

    fn n_cos(&self) -> usize {
        self.u_prime() / 2 + 1
    }

    /// `(c1, a1, c2, a2)` of channel `c`.
    pub fn channel_params(&self, c: usize) -> (f64, f64, f64, f64) {
        let nc = self.n_cos();
        if c < nc {
            (1.0, c as f64, 0.0, 0.0)
        } else {
            (0.0, 0.0, 1.0, (c - nc + 1) as f64)
        }
    }

    /// `(U+1)×U′` matrix mapping one feature's channels to its values at
    /// lags `0..=U`.
    pub fn lag_weights(&self) -> Matrix {
        let up = self.u_prime();
        let nc = self.n_cos();
        let theta = 2.0 * PI / up as f64;
        Matrix::from_fn(up, up, |lag, c| {
            let (g, is_sin) = if c < nc { (c, false) } else { (c - nc + 1, true) };
            let arg = theta * (g * lag % up) as f64;
            let nyquist = up % 2 == 0 && g == up / 2;
            let mult = if g == 0 || nyquist { 1.0 } else { 2.0 };
            let basis = if is_sin { arg.sin() } else { arg.cos() };
            mult * basis / up as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReadout {
    pub bank: LagBank,
    pub n_features: usize,
    /// d′×F; key at lag ℓ is `key_proj · feat(ℓ)`.
    pub key_proj: Matrix,
    /// Query `= query_lag0 · feat(0) + query_window · Σ_ℓ feat(ℓ) + query_bias`.
    pub query_lag0: Matrix,
    pub query_window: Matrix,
    pub query_bias: Vec<f64>,
    /// d×F; value at lag ℓ is `value_proj · feat(ℓ)`.
    pub value_proj: Matrix,
    /// Feature that is one at real positions and zero in the padding.
    pub presence: usize,
    pub min_lag: usize,
    pub selector: KernelSelector,
}

impl SelectionReadout {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bank: LagBank,
        key_proj: Matrix,
        query_lag0: Matrix,
        query_window: Matrix,
        query_bias: Vec<f64>,
        value_proj: Matrix,
        presence: usize,
        min_lag: usize,
        selector: KernelSelector,
    ) -> Result<Self> {
        let f = key_proj.cols();
        let dp = key_proj.rows();
        if query_lag0.shape() != (dp, f) || query_window.shape() != (dp, f) || query_bias.len() != dp {
            return shape_err("query maps must match the key map shape");
        }
        if value_proj.cols() != f {
            return shape_err("value map must read the same features as the key map");
        }
        if presence >= f {
            return shape_err(format!("presence feature {presence} out of range for {f} features"));
        }
        if selector.d_prime != dp {
            return shape_err(format!("selector expects key dimension {}, keys have {dp}", selector.d_prime));
        }
        Ok(Self {
            bank,
            n_features: f,
            key_proj,
            query_lag0,
            query_window,
            query_bias,
            value_proj,
            presence,
            min_lag,
            selector,
        })
    }

    pub fn d_in(&self) -> usize {
        self.n_features * self.bank.channels_per_feature()
    }

    pub fn d_out(&self) -> usize {
        self.value_proj.rows()
    }

    /// Feature values at every lag, `feat[ℓ][f]`.
    pub fn lagged_features(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let w = self.bank.lag_weights();
        let cpf = self.bank.channels_per_feature();
        let lags = self.bank.window + 1;
        let mut feat = vec![vec![0.0; self.n_features]; lags];
        for f in 0..self.n_features {
            let ch = &x[f * cpf..(f + 1) * cpf];
            for (lag, row) in feat.iter_mut().enumerate() {
                row[f] = w.row(lag).iter().zip(ch).map(|(a, b)| a * b).sum();
            }
        }
        feat
    }

    pub fn apply_token(&self, x: &[f64]) -> Vec<f64> {
        let feat = self.lagged_features(x);
        let cpf = self.bank.channels_per_feature();
        // The g = 0 cosine channel is the plain window sum.
        let window_sum: Vec<f64> = (0..self.n_features).map(|f| x[f * cpf]).collect();
        let mut q = self.query_lag0.matvec(&feat[0]).expect("query shape");
        let qw = self.query_window.matvec(&window_sum).expect("query shape");
        for ((qi, wi), bi) in q.iter_mut().zip(&qw).zip(&self.query_bias) {
            *qi += wi + bi;
        }
        let lags: Vec<usize> = (self.min_lag..feat.len()).filter(|&l| feat[l][self.presence] > 0.5).collect();
        let mut out = vec![0.0; self.d_out()];
        if lags.is_empty() {
            return out;
        }
        let keys: Vec<Vec<f64>> = lags.iter().map(|&l| self.key_proj.matvec(&feat[l]).expect("key shape")).collect();
        let scores = surrogate_scores_vecs(&q, &keys, self.selector.a_scale);
        let w = softmax_weights(&scores, self.selector.kappa);
        for (&l, wl) in lags.iter().zip(w) {
            let v = self.value_proj.matvec(&feat[l]).expect("value shape");
            for (o, vi) in out.iter_mut().zip(v) {
                *o += wl * vi;
            }
        }
        out
    }

    pub fn apply(&self, x: &SequenceTensor) -> Result<SequenceTensor> {
        if x.d() != self.d_in() {
            return shape_err(format!("readout expects {} channels, got {}", self.d_in(), x.d()));
        }
        let mut out = Matrix::zeros(self.d_out(), x.t());
        for t in 0..x.t() {
            out.set_column(t, &self.apply_token(&x.column(t)));
        }
        SequenceTensor::new(out)
    }
}
