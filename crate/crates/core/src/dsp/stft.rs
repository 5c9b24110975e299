use std::f64::consts::PI;

use ndarray::Array2;

use super::fft::fft_in_place;
use super::DspError;

/// Magnitude spectrogram, `n_frames × (n_fft/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub sr: u32,
    pub n_fft: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.magnitudes.ncols()
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sr as f64 / self.n_fft as f64
    }

    /// Squared magnitudes.
    pub fn power(&self) -> Array2<f64> {
        self.magnitudes.mapv(|m| m * m)
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Number of frames when the signal is zero-padded to cover a full final frame.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> usize {
    if len <= frame {
        1
    } else {
        1 + (len - frame).div_ceil(hop)
    }
}

/// Short-time Fourier transform with a periodic Hann window.
///
/// Frame `t` covers samples `[t*hop, t*hop + n_fft)`; samples past the end of
/// the signal are treated as zeros.
pub fn stft(signal: &[f32], sr: u32, n_fft: usize, hop: usize) -> Result<Spectrogram, DspError> {
    if n_fft == 0 || !n_fft.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(n_fft));
    }
    if hop == 0 {
        return Err(DspError::ZeroHop);
    }
    if signal.is_empty() {
        return Err(DspError::EmptySignal);
    }

    let window = hann_window(n_fft);
    let n_frames = frame_count(signal.len(), n_fft, hop);
    let n_bins = n_fft / 2 + 1;
    let mut magnitudes = Array2::<f64>::zeros((n_frames, n_bins));
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];

    for t in 0..n_frames {
        let start = t * hop;
        for (i, w) in window.iter().enumerate() {
            re[i] = signal.get(start + i).map_or(0.0, |&x| x as f64 * w);
            im[i] = 0.0;
        }
        fft_in_place(&mut re, &mut im, false);
        let mut row = magnitudes.row_mut(t);
        for k in 0..n_bins {
            row[k] = re[k].hypot(im[k]);
        }
    }

    Ok(Spectrogram { magnitudes, sr, n_fft, hop })
}
