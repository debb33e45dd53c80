//! Dense real matrices, seeded random streams, the radix-2 FFT and causal
//! windowed convolution.

mod conv;
mod fft;
mod matrix;
mod rng;

pub use conv::{conv_causal, conv_causal_fft, conv_causal_naive, use_fft_path, FilterBank};
pub use fft::{complex_fft, FftDirection};
pub use matrix::{Matrix, SequenceTensor};
pub use num_complex::Complex64;
pub use rng::RngStream;
