//! Ordinary state space realization of the trigonometric convolution
//! filter: four states per channel arranged as two 2×2 rotation blocks,
//! evaluated by a recurrent scan, plus the two-scan finite window.
//!
//! The state absorbs the current input before the readout,
//! `x_t = A x_{t-1} + B u_t`, `y_t = C x_t + D u_t`, with `x_{-1} = 0`, so
//! the impulse response is `h_t = C A^t B + D δ_t`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::model::ConvLayer;
use crate::numerics::{FilterBank, Matrix, SequenceTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceParams {
    /// Block-diagonal of 2×2 rotations, 4D×4D.
    pub a_rec: Matrix,
    /// 4D×D, one `[1,0,1,0]` column per channel.
    pub b_rec: Matrix,
    /// D×4D, row k reads `c1` from the cosine block and `c2` from the sine block.
    pub c_rec: Matrix,
    /// D×D feedthrough; zero for rotation realizations.
    pub d_rec: Matrix,
    pub state_dim: usize,
    /// Rotation angle of each 2×2 block, in block order.
    pub angles: Vec<f64>,
}

/// Scan state: the state vector and the index of the last absorbed input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl StateSpaceParams {
    pub fn channels(&self) -> usize {
        self.c_rec.rows()
    }

    /// `A^n` as per-block rotation angles `n·φ`.
    pub fn power_angles(&self, n: usize) -> Vec<f64> {
        self.angles.iter().map(|a| a * n as f64).collect()
    }

    /// Induced filter taps `(C A^t B + D δ_t)[k,k]` for t = 0..=window.
    pub fn induced_filter(&self, window: usize) -> FilterBank {
        let d = self.channels();
        let mut taps = Matrix::zeros(d, window + 1);
        // Impulse response of each channel: rotate the B column forward.
        for k in 0..d {
            for t in 0..=window {
                let mut acc = if t == 0 { self.d_rec[(k, k)] } else { 0.0 };
                for blk in 0..2 {
                    let b = 2 * k + blk;
                    let (s, c) = (self.angles[b] * t as f64).sin_cos();
                    let (b0, b1) = (self.b_rec[(2 * b, k)], self.b_rec[(2 * b + 1, k)]);
                    let x0 = c * b0 - s * b1;
                    let x1 = s * b0 + c * b1;
                    acc += self.c_rec[(k, 2 * b)] * x0 + self.c_rec[(k, 2 * b + 1)] * x1;
                }
                taps[(k, t)] = acc;
            }
        }
        FilterBank::new(taps).expect("finite parameters")
    }

    fn step(&self, state: &mut ScanState, u: &[f64], angles: &[f64]) {
        rotate_blocks(&mut state.x, angles);
        for (i, xi) in state.x.iter_mut().enumerate() {
            let row = self.b_rec.row(i);
            *xi += row.iter().zip(u).map(|(b, v)| b * v).sum::<f64>();
        }
        state.t += 1;
    }

    fn readout(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut y = self.c_rec.matvec(x).expect("state dimension");
        let du = self.d_rec.matvec(u).expect("input dimension");
        y.iter_mut().zip(du).for_each(|(a, b)| *a += b);
        y
    }
}

fn rotate_blocks(x: &mut [f64], angles: &[f64]) {
    for (b, phi) in angles.iter().enumerate() {
        let (s, c) = phi.sin_cos();
        let (x0, x1) = (x[2 * b], x[2 * b + 1]);
        x[2 * b] = c * x0 - s * x1;
        x[2 * b + 1] = s * x0 + c * x1;
    }
}

fn rotation(phi: f64) -> [[f64; 2]; 2] {
    let (s, c) = phi.sin_cos();
    [[c, -s], [s, c]]
}

/// Product of 2×2 matrices.
fn mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// `R(φ)^n` by exponentiation by squaring.
pub fn rotation_power(phi: f64, mut n: usize) -> [[f64; 2]; 2] {
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut base = rotation(phi);
    while n > 0 {
        if n & 1 == 1 {
            result = mul2(result, base);
        }
        base = mul2(base, base);
        n >>= 1;
    }
    result
}

/// Rotation realization of the layer's filter: channel k gets blocks
/// `R(2π a1_k/(U+1))` and `R(2π a2_k/(U+1))`, so `C A^t B` reproduces
/// `c1 cos(·) + c2 sin(·)` at every tap. The feedthrough is zero.
pub fn build_rotation_ssm(layer: &ConvLayer) -> StateSpaceParams {
    let d = layer.d();
    let n = 4 * d;
    let theta = layer.theta();
    let mut angles = Vec::with_capacity(2 * d);
    let mut a_rec = Matrix::zeros(n, n);
    let mut b_rec = Matrix::zeros(n, d);
    let mut c_rec = Matrix::zeros(d, n);
    for k in 0..d {
        for (blk, a) in [layer.a1[k], layer.a2[k]].into_iter().enumerate() {
            let phi = theta * a;
            angles.push(phi);
            let r = rotation(phi);
            let base = 4 * k + 2 * blk;
            for i in 0..2 {
                for j in 0..2 {
                    a_rec[(base + i, base + j)] = r[i][j];
                }
            }
            b_rec[(base, k)] = 1.0;
        }
        c_rec[(k, 4 * k)] = layer.c1[k];
        c_rec[(k, 4 * k + 3)] = layer.c2[k];
    }
    StateSpaceParams { a_rec, b_rec, c_rec, d_rec: Matrix::zeros(d, d), state_dim: n, angles }
}

fn check_input(params: &StateSpaceParams, u: &SequenceTensor) -> Result<()> {
    if u.d() != params.b_rec.cols() {
        return shape_err(format!("scan expects {} input channels, got {}", params.b_rec.cols(), u.d()));
    }
    Ok(())
}

/// Recurrent evaluation over the whole sequence (infinite window).
pub fn ssm_scan(params: &StateSpaceParams, u: &SequenceTensor) -> Result<SequenceTensor> {
    check_input(params, u)?;
    let mut state = ScanState { x: vec![0.0; params.state_dim], t: 0 };
    let mut y = Matrix::zeros(params.channels(), u.t());
    for t in 0..u.t() {
        let ut = u.column(t);
        params.step(&mut state, &ut, &params.angles);
        y.set_column(t, &params.readout(&state.x, &ut));
    }
    Ok(SequenceTensor::from_matrix_unchecked(y))
}

/// States of the plain scan (`x_t`) and of the scan fed with `u` delayed by
/// `U+1` positions (`x'_t`).
pub fn window_states(params: &StateSpaceParams, u: &SequenceTensor, window: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_input(params, u)?;
    let lag = window + 1;
    let zero_in = vec![0.0; u.d()];
    let mut main = ScanState { x: vec![0.0; params.state_dim], t: 0 };
    let mut delayed = main.clone();
    let mut xs = Vec::with_capacity(u.t());
    let mut xds = Vec::with_capacity(u.t());
    for t in 0..u.t() {
        params.step(&mut main, &u.column(t), &params.angles);
        let ud = if t >= lag { u.column(t - lag) } else { zero_in.clone() };
        params.step(&mut delayed, &ud, &params.angles);
        xs.push(main.x.clone());
        xds.push(delayed.x.clone());
    }
    Ok((xs, xds))
}

/// Finite-window evaluation `y°_t = C(x_t − A^{U+1} x'_t) + D u_t`.
pub fn windowed_scan(params: &StateSpaceParams, u: &SequenceTensor, window: usize) -> Result<SequenceTensor> {
    let (xs, xds) = window_states(params, u, window)?;
    let pow = params.power_angles(window + 1);
    let mut y = Matrix::zeros(params.channels(), u.t());
    for t in 0..u.t() {
        let mut shifted = xds[t].clone();
        rotate_blocks(&mut shifted, &pow);
        let diff: Vec<f64> = xs[t].iter().zip(&shifted).map(|(a, b)| a - b).collect();
        y.set_column(t, &params.readout(&diff, &u.column(t)));
    }
    Ok(SequenceTensor::from_matrix_unchecked(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::materialize_filter;
    use crate::numerics::{conv_causal_naive, RngStream};

    fn random_layer(rng: &mut RngStream, d: usize, window: usize) -> ConvLayer {
        let mut v = |lo: f64, hi: f64| (0..d).map(|_| rng.uniform(lo, hi)).collect::<Vec<_>>();
        ConvLayer::new(Matrix::identity(d), v(-1.0, 1.0), v(-1.0, 1.0), v(-4.0, 4.0), v(-4.0, 4.0), window)
            .unwrap()
    }

    #[test]
    fn zero_coefficients_give_zero_output() {
        let layer = ConvLayer::zeros(2, 5);
        let p = build_rotation_ssm(&layer);
        let u = SequenceTensor::from_fn(2, 7, |i, j| (i + j) as f64);
        assert!(ssm_scan(&p, &u).unwrap().matrix().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_filter_has_unit_taps() {
        let mut layer = ConvLayer::zeros(1, 6);
        layer.c1[0] = 1.0;
        let h = build_rotation_ssm(&layer).induced_filter(6);
        assert!(h.coefficients().as_slice().iter().all(|v| (*v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn induced_filter_matches_materialized() {
        let mut rng = RngStream::new(8, 0);
        let layer = random_layer(&mut rng, 4, 32);
        let p = build_rotation_ssm(&layer);
        assert_eq!(p.state_dim, 16);
        let diff = p.induced_filter(32).coefficients().max_abs_diff(materialize_filter(&layer).coefficients());
        assert!(diff <= 1e-10, "{diff}");
    }

    #[test]
    fn dense_matrices_agree_with_block_evaluation() {
        let mut rng = RngStream::new(12, 0);
        let layer = random_layer(&mut rng, 2, 9);
        let p = build_rotation_ssm(&layer);
        // h_t = C A^t B computed with dense products.
        let mut at = Matrix::identity(p.state_dim);
        let h = p.induced_filter(9);
        for t in 0..=9 {
            let cab = p.c_rec.matmul(&at).unwrap().matmul(&p.b_rec).unwrap();
            for k in 0..2 {
                assert!((cab[(k, k)] - h.tap(k, t)).abs() < 1e-12);
            }
            at = p.a_rec.matmul(&at).unwrap();
        }
    }

    #[test]
    fn impulse_response_is_filter() {
        let mut rng = RngStream::new(2, 0);
        let layer = random_layer(&mut rng, 3, 15);
        let p = build_rotation_ssm(&layer);
        let mut u = SequenceTensor::zeros(3, 16);
        for k in 0..3 {
            u[(k, 0)] = 1.0;
        }
        let y = ssm_scan(&p, &u).unwrap();
        let h = p.induced_filter(15);
        for k in 0..3 {
            for t in 0..16 {
                assert!((y[(k, t)] - h.tap(k, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scan_matches_full_window_convolution() {
        let mut rng = RngStream::new(6, 0);
        let layer = random_layer(&mut rng, 4, 127);
        let p = build_rotation_ssm(&layer);
        let u = SequenceTensor::from_fn(4, 128, |_, _| rng.uniform(-1.0, 1.0));
        let y = ssm_scan(&p, &u).unwrap();
        let oracle = conv_causal_naive(&p.induced_filter(127), &u).unwrap();
        let rel = y.max_abs_diff(&oracle) / oracle.matrix().max_abs().max(1e-300);
        assert!(rel <= 1e-9, "{rel}");
    }

    #[test]
    fn window_covering_sequence_equals_plain_scan() {
        let mut rng = RngStream::new(7, 0);
        let layer = random_layer(&mut rng, 2, 10);
        let p = build_rotation_ssm(&layer);
        let u = SequenceTensor::from_fn(2, 20, |_, _| rng.uniform(-1.0, 1.0));
        let full = ssm_scan(&p, &u).unwrap();
        for window in [19, 25] {
            assert!(windowed_scan(&p, &u, window).unwrap().max_abs_diff(&full) <= 1e-12);
        }
    }

    #[test]
    fn moving_sum_of_ones() {
        let mut layer = ConvLayer::zeros(1, 3);
        layer.c1[0] = 1.0;
        let p = build_rotation_ssm(&layer);
        let u = SequenceTensor::from_fn(1, 10, |_, _| 1.0);
        let y = windowed_scan(&p, &u, 3).unwrap();
        for t in 3..10 {
            assert!((y[(0, t)] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_identity_on_states() {
        let mut rng = RngStream::new(10, 0);
        let layer = random_layer(&mut rng, 2, 16);
        let p = build_rotation_ssm(&layer);
        let u = SequenceTensor::from_fn(2, 60, |_, _| rng.uniform(-1.0, 1.0));
        let window = 16;
        let (xs, xds) = window_states(&p, &u, window).unwrap();
        let pow = p.power_angles(window + 1);
        for t in 0..60 {
            let mut lhs = xds[t].clone();
            rotate_blocks(&mut lhs, &pow);
            let lhs: Vec<f64> = xs[t].iter().zip(&lhs).map(|(a, b)| a - b).collect();
            // Σ_{s=t-U}^{t} A^{t-s} B u_s accumulated directly.
            let mut rhs = vec![0.0; p.state_dim];
            for s in t.saturating_sub(window)..=t {
                let mut bu = p.b_rec.matvec(&u.column(s)).unwrap();
                rotate_blocks(&mut bu, &p.power_angles(t - s));
                rhs.iter_mut().zip(bu).for_each(|(a, b)| *a += b);
            }
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() <= 1e-11);
            }
        }
    }

    #[test]
    fn rotation_blocks_stay_orthogonal() {
        let mut rng = RngStream::new(13, 0);
        let layer = random_layer(&mut rng, 3, 50);
        let p = build_rotation_ssm(&layer);
        for (b, phi) in p.angles.iter().enumerate() {
            let base = 2 * b;
            let blk = [[p.a_rec[(base, base)], p.a_rec[(base, base + 1)]], [p.a_rec[(base + 1, base)], p.a_rec[(base + 1, base + 1)]]];
            let gram = mul2([[blk[0][0], blk[1][0]], [blk[0][1], blk[1][1]]], blk);
            assert!((gram[0][0] - 1.0).abs() <= 1e-12 && gram[0][1].abs() <= 1e-12 && (gram[1][1] - 1.0).abs() <= 1e-12);
            for n in [1usize, 17, 1000, 1_000_000] {
                let r = rotation_power(*phi, n);
                let g = mul2([[r[0][0], r[1][0]], [r[0][1], r[1][1]]], r);
                assert!((g[0][0] - 1.0).abs() <= 1e-9 && g[0][1].abs() <= 1e-9 && (g[1][1] - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn shape_error_on_wrong_channel_count() {
        let p = build_rotation_ssm(&ConvLayer::zeros(2, 3));
        assert!(ssm_scan(&p, &SequenceTensor::zeros(3, 4)).is_err());
    }
}
