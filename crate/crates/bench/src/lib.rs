//! Benchmark inputs and wall-clock timing for the sequence-mixing kernels:
//! direct and FFT convolution, the recurrent scan and attention.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use ssmsel::model::materialize_filter;
use ssmsel::numerics::{conv_causal_fft, conv_causal_naive};
use ssmsel::ssm::{build_rotation_ssm, ssm_scan, StateSpaceParams};
use ssmsel::training::AttentionBaseline;
use ssmsel::{ConvLayer, FilterBank, Matrix, Result, RngStream, SequenceTensor};

pub const DEFAULT_GRID: [usize; 3] = [256, 1024, 4096];
pub const DEFAULT_CHANNELS: usize = 8;
pub const DEFAULT_REPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    NaiveConv,
    FftConv,
    Scan,
    Attention,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::NaiveConv, Kernel::FftConv, Kernel::Scan, Kernel::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::NaiveConv => "naive_conv",
            Kernel::FftConv => "fft_conv",
            Kernel::Scan => "scan",
            Kernel::Attention => "attention",
        }
    }
}

/// One length-`t` input with a full-window filter (`U = t − 1`), its
/// rotation realization, and a two-layer attention model of equal width.
pub struct KernelInputs {
    pub t: usize,
    pub x: SequenceTensor,
    pub filter: FilterBank,
    pub ssm: StateSpaceParams,
    pub attention: AttentionBaseline,
}

pub fn kernel_inputs(t: usize, d: usize, seed: u64) -> Result<KernelInputs> {
    assert!(t > 0 && d > 0);
    let mut rng = RngStream::named(seed, &format!("bench/{t}"));
    let mut v = |lo: f64, hi: f64| (0..d).map(|_| rng.uniform(lo, hi)).collect::<Vec<_>>();
    let (c1, c2, a1, a2) = (v(-1.0, 1.0), v(-1.0, 1.0), v(-4.0, 4.0), v(-4.0, 4.0));
    let layer = ConvLayer::new(Matrix::identity(d), c1, c2, a1, a2, t - 1)?;
    let x = SequenceTensor::from_fn(d, t, |_, _| rng.uniform(-1.0, 1.0));
    let attention = AttentionBaseline::init(d, d, 2, 4 * d, t, d, &mut rng)?;
    Ok(KernelInputs { t, x, filter: materialize_filter(&layer), ssm: build_rotation_ssm(&layer), attention })
}

pub fn run_kernel(kernel: Kernel, inputs: &KernelInputs) -> Result<SequenceTensor> {
    match kernel {
        Kernel::NaiveConv => conv_causal_naive(&inputs.filter, &inputs.x),
        Kernel::FftConv => conv_causal_fft(&inputs.filter, &inputs.x),
        Kernel::Scan => ssm_scan(&inputs.ssm, &inputs.x),
        Kernel::Attention => inputs.attention.forward(&inputs.x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kernel: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub reps: usize,
    pub min_ms: f64,
    pub max_ms: f64,
}

pub fn time_kernel(kernel: Kernel, inputs: &KernelInputs, reps: usize) -> Result<BenchRow> {
    let reps = reps.max(1);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..reps {
        let start = Instant::now();
        std::hint::black_box(run_kernel(kernel, inputs)?);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        lo = lo.min(ms);
        hi = hi.max(ms);
    }
    Ok(BenchRow { kernel: kernel.name().into(), t: inputs.t, d: inputs.x.d(), reps, min_ms: lo, max_ms: hi })
}

/// Every kernel at every length, lengths in grid order.
pub fn bench_grid(grid: &[usize], d: usize, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(grid.len() * Kernel::ALL.len());
    for &t in grid {
        let inputs = kernel_inputs(t, d, seed)?;
        for k in Kernel::ALL {
            rows.push(time_kernel(k, &inputs, reps)?);
        }
    }
    Ok(rows)
}

/// Whether the FFT path beat direct convolution at the largest length timed.
pub fn fft_beats_naive(rows: &[BenchRow]) -> Option<bool> {
    let t = rows.iter().map(|r| r.t).max()?;
    let min_at = |k: Kernel| rows.iter().find(|r| r.t == t && r.kernel == k.name()).map(|r| r.min_ms);
    Some(min_at(Kernel::FftConv)? < min_at(Kernel::NaiveConv)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_length_gives_one_row_per_kernel() {
        let rows = bench_grid(&[64], 4, 1, 0).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.t == 64 && r.min_ms <= r.max_ms));
        assert!(fft_beats_naive(&rows).is_some());
    }

    #[test]
    fn convolution_kernels_agree() {
        let inputs = kernel_inputs(100, 3, 1).unwrap();
        let a = run_kernel(Kernel::NaiveConv, &inputs).unwrap();
        let b = run_kernel(Kernel::FftConv, &inputs).unwrap();
        let c = run_kernel(Kernel::Scan, &inputs).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
        assert!(a.max_abs_diff(&c) < 1e-9 * a.matrix().max_abs().max(1.0));
    }
}
