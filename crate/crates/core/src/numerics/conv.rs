use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{fft_in_place, FftDirection};
use super::{Matrix, SequenceTensor};
use crate::error::{shape_err, Error, Result};

/// Per-channel causal filter taps: `coefficients[k][j]` is tap `j` of channel `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    coefficients: Matrix,
}

impl FilterBank {
    pub fn new(coefficients: Matrix) -> Result<Self> {
        if coefficients.cols() == 0 {
            return Err(Error::InvalidArgument("filter needs at least one tap".into()));
        }
        if !coefficients.all_finite() {
            return Err(Error::InvalidArgument("filter has non-finite taps".into()));
        }
        Ok(Self { coefficients })
    }

    /// Identity filter: tap 0 is one, the rest zero.
    pub fn delta(d: usize, window: usize) -> Self {
        let mut m = Matrix::zeros(d, window + 1);
        for k in 0..d {
            m[(k, 0)] = 1.0;
        }
        Self { coefficients: m }
    }

    pub fn d(&self) -> usize {
        self.coefficients.rows()
    }

    pub fn window(&self) -> usize {
        self.coefficients.cols() - 1
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefficients
    }

    pub fn tap(&self, k: usize, j: usize) -> f64 {
        self.coefficients[(k, j)]
    }

    /// max over channels of Σ_j |H[k,j]|.
    pub fn max_row_l1(&self) -> f64 {
        (0..self.d())
            .map(|k| self.coefficients.row(k).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn check_channels(filter: &FilterBank, x: &SequenceTensor) -> Result<()> {
    if filter.d() != x.d() {
        return shape_err(format!("filter has {} channels, input has {}", filter.d(), x.d()));
    }
    Ok(())
}

/// `Y[k,t] = Σ_{j=0..min(U,t)} H[k,j] X[k,t-j]`.
pub fn conv_causal_naive(filter: &FilterBank, x: &SequenceTensor) -> Result<SequenceTensor> {
    check_channels(filter, x)?;
    let (d, t_len, u) = (x.d(), x.t(), filter.window());
    let mut y = Matrix::zeros(d, t_len);
    for k in 0..d {
        let h = filter.coefficients.row(k);
        let xr = x.matrix().row(k);
        let yr = y.row_mut(k);
        for t in 0..t_len {
            let mut acc = 0.0;
            for j in 0..=u.min(t) {
                acc += h[j] * xr[t - j];
            }
            yr[t] = acc;
        }
    }
    Ok(SequenceTensor::from_matrix_unchecked(y))
}

/// Same result as [`conv_causal_naive`] via zero-padded FFTs of length
/// `next_power_of_two(T + U)`.
pub fn conv_causal_fft(filter: &FilterBank, x: &SequenceTensor) -> Result<SequenceTensor> {
    check_channels(filter, x)?;
    let (d, t_len, u) = (x.d(), x.t(), filter.window());
    let n = (t_len + u).next_power_of_two();
    let mut y = Matrix::zeros(d, t_len);
    let mut hb = vec![Complex64::new(0.0, 0.0); n];
    let mut xb = vec![Complex64::new(0.0, 0.0); n];
    let mut sb = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..d {
        let h = filter.coefficients.row(k);
        let xr = x.matrix().row(k);
        let scale = h.iter().map(|v| v.abs()).sum::<f64>() * xr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        // Two real transforms packed into one complex transform:
        // filter in the real part, signal in the imaginary part.
        for (j, v) in h.iter().enumerate() {
            sb[j].re = *v;
        }
        for v in sb.iter_mut().skip(h.len()) {
            v.re = 0.0;
        }
        for (t, v) in sb.iter_mut().enumerate() {
            v.im = if t < t_len { xr[t] } else { 0.0 };
        }
        fft_in_place(&mut sb, FftDirection::Forward)?;
        for i in 0..n {
            let a = sb[i];
            let b = sb[(n - i) % n].conj();
            hb[i] = (a + b) * 0.5;
            xb[i] = (a - b) * Complex64::new(0.0, -0.5);
        }
        for i in 0..n {
            xb[i] *= hb[i];
        }
        fft_in_place(&mut xb, FftDirection::Inverse)?;
        // Round-off below this level is indistinguishable from an exact zero.
        let floor = 4.0 * f64::EPSILON * (n.trailing_zeros() as f64 + 1.0) * scale;
        let yr = y.row_mut(k);
        for t in 0..t_len {
            let v = xb[t].re;
            yr[t] = if v.abs() <= floor { 0.0 } else { v };
        }
    }
    Ok(SequenceTensor::from_matrix_unchecked(y))
}

/// FFT when `T·(U+1) > 16·T·log2(T+U)`, i.e. when the window is long
/// compared with the transform's per-position cost.
pub fn use_fft_path(t_len: usize, window: usize) -> bool {
    let work_naive = (t_len * (window + 1)) as f64;
    let work_fft = 16.0 * t_len as f64 * ((t_len + window) as f64).log2();
    work_naive > work_fft
}

pub fn conv_causal(filter: &FilterBank, x: &SequenceTensor) -> Result<SequenceTensor> {
    if use_fft_path(x.t(), filter.window()) {
        conv_causal_fft(filter, x)
    } else {
        conv_causal_naive(filter, x)
    }
}
