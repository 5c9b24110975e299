use ndarray::Array2;

use super::DspError;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels × (n_fft/2 + 1)`.
///
/// Filter edges are equally spaced on the HTK mel scale between `fmin` and
/// `fmax`. Triangles are evaluated at the FFT bin frequencies and each row is
/// rescaled so its largest sampled weight is exactly 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sr: u32, fmin: f64, fmax: f64) -> Result<Array2<f64>, DspError> {
    let nyquist = sr as f64 / 2.0;
    if n_mels == 0 || n_fft == 0 {
        return Err(DspError::InvalidArgument("n_mels and n_fft must be positive".into()));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(DspError::InvalidArgument(format!(
            "mel range requires 0 <= fmin < fmax <= sr/2, got [{fmin}, {fmax}] at sr {sr}"
        )));
    }

    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64)).collect();

    let mut bank = Array2::<f64>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut row = bank.row_mut(m);
        for k in 0..n_bins {
            let f = k as f64 * sr as f64 / n_fft as f64;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            row[k] = w;
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(DspError::EmptyMelFilter(m));
        }
        row.mapv_inplace(|w| w / peak);
    }
    Ok(bank)
}
