//! Signal-processing kernels shared by deformations and the built-in
//! feature extractors.
//!
//! Conventions: periodic Hann window, unnormalized forward DFT, HTK mel
//! scale with unnormalized triangular filters (peak 1), orthonormal DCT-II.
//! All kernels are pure; internal arithmetic is carried out in `f64`.

mod dct;
mod fft;
mod filter;
mod mel;
mod resample;
mod stft;

pub use dct::{dct_ii, dct_iii, DctPlan};
pub use fft::{fft, ifft};
pub use filter::{lowpass_fir, DEFAULT_LOWPASS_TAPS};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz};
pub use resample::resample;
pub use stft::{frame_count as stft_frame_count, hann_window, stft, Spectrogram};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("n_fft must be a power of two, got {0}")]
    NotPowerOfTwo(usize),
    #[error("hop must be at least 1")]
    ZeroHop,
    #[error("signal is empty")]
    EmptySignal,
    #[error("empty mel filter (band {0}): too many mel bands for the FFT resolution")]
    EmptyMelFilter(usize),
    #[error("cutoff above Nyquist ({cutoff} Hz >= {nyquist} Hz)")]
    CutoffAboveNyquist { cutoff: f64, nyquist: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
