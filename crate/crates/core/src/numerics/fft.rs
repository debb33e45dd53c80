use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftDirection {
    Forward,
    /// Inverse transform including the 1/n normalization.
    Inverse,
}

/// Iterative radix-2 FFT (bit-reversal permutation followed by butterflies).
pub fn complex_fft(values: &[Complex64], direction: FftDirection) -> Result<Vec<Complex64>> {
    let mut buf = values.to_vec();
    fft_in_place(&mut buf, direction)?;
    Ok(buf)
}

pub(crate) fn fft_in_place(buf: &mut [Complex64], direction: FftDirection) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("FFT length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                buf.swap(i, j);
            }
        }
    }
    let sign = match direction {
        FftDirection::Forward => -1.0,
        FftDirection::Inverse => 1.0,
    };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles are evaluated directly rather than by repeated
        // multiplication to keep the round-off independent of n.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if direction == FftDirection::Inverse {
        let inv = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn length_one_is_identity() {
        let x = [Complex64::new(2.5, -1.0)];
        assert_eq!(complex_fft(&x, FftDirection::Forward).unwrap(), x);
        assert_eq!(complex_fft(&x, FftDirection::Inverse).unwrap(), x);
    }

    #[test]
    fn constant_signal_lands_in_dc_bin() {
        let y = complex_fft(&[c(1.0); 4], FftDirection::Forward).unwrap();
        assert_eq!(y, vec![c(4.0), c(0.0), c(0.0), c(0.0)]);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(complex_fft(&[c(1.0); 6], FftDirection::Forward).is_err());
        assert!(complex_fft(&[], FftDirection::Forward).is_err());
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = RngStream::new(11, 0);
        let n = 16;
        let x: Vec<Complex64> =
            (0..n).map(|_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect();
        let fast = complex_fft(&x, FftDirection::Forward).unwrap();
        for (k, f) in fast.iter().enumerate() {
            let direct: Complex64 = x
                .iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (j * k) as f64 / n as f64))
                .sum();
            assert!((direct - f).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_length_256() {
        let mut rng = RngStream::new(5, 0);
        let x: Vec<Complex64> =
            (0..256).map(|_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect();
        let y = complex_fft(&complex_fft(&x, FftDirection::Forward).unwrap(), FftDirection::Inverse)
            .unwrap();
        let err = x.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        assert!(err <= 1e-12, "round trip error {err}");
    }
}
