use std::f64::consts::PI;

use super::DspError;

pub const DEFAULT_LOWPASS_TAPS: usize = 255;

/// Linear-phase windowed-sinc (Hamming) low-pass filter. The
/// `(n_taps - 1) / 2` sample group delay is removed, so the output is aligned
/// with the input and has the same length.
pub fn lowpass_fir(signal: &[f32], cutoff_hz: f64, sr: u32, n_taps: usize) -> Result<Vec<f32>, DspError> {
    let nyquist = sr as f64 / 2.0;
    if !(cutoff_hz < nyquist) {
        return Err(DspError::CutoffAboveNyquist { cutoff: cutoff_hz, nyquist });
    }
    if cutoff_hz <= 0.0 {
        return Err(DspError::InvalidArgument(format!("cutoff must be positive, got {cutoff_hz}")));
    }
    if n_taps % 2 == 0 {
        return Err(DspError::InvalidArgument(format!("n_taps must be odd, got {n_taps}")));
    }

    let taps = design(cutoff_hz / sr as f64, n_taps);
    let delay = (n_taps / 2) as isize;
    let len = signal.len() as isize;
    let out = (0..len)
        .map(|i| {
            let mut acc = 0.0;
            for (k, h) in taps.iter().enumerate() {
                let idx = i + delay - k as isize;
                if idx >= 0 && idx < len {
                    acc += h * signal[idx as usize] as f64;
                }
            }
            acc as f32
        })
        .collect();
    Ok(out)
}

/// Normalized cutoff `fc` in cycles per sample.
fn design(fc: f64, n_taps: usize) -> Vec<f64> {
    let m = (n_taps - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|n| {
            let x = n as f64 - m;
            let ideal = if x == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * x).sin() / (PI * x) };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (n_taps - 1) as f64).cos();
            ideal * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}
