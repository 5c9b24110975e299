use std::f64::consts::PI;

use super::DspError;

const TAPS: usize = 64;
const HALF: isize = (TAPS / 2) as isize;
const KAISER_BETA: f64 = 8.0;
const ROLLOFF: f64 = 0.95;
const MAX_TABLE_PHASES: u64 = 4096;

/// Windowed-sinc polyphase resampler with a Kaiser window and 64 taps per
/// phase. Each phase is normalized to unit DC gain. Equal rates return the
/// input unchanged.
pub fn resample(signal: &[f32], sr_from: u32, sr_to: u32) -> Result<Vec<f32>, DspError> {
    if sr_from == 0 || sr_to == 0 {
        return Err(DspError::InvalidArgument("sample rates must be positive".into()));
    }
    if sr_from == sr_to || signal.is_empty() {
        return Ok(signal.to_vec());
    }

    let g = gcd(sr_from as u64, sr_to as u64);
    let up = sr_to as u64 / g;
    let down = sr_from as u64 / g;
    // Cutoff in cycles per input sample.
    let cutoff = 0.5 * (up as f64 / down as f64).min(1.0) * ROLLOFF;

    let out_len = ((signal.len() as u128 * up as u128).div_ceil(down as u128)) as usize;
    let table: Option<Vec<[f64; TAPS]>> =
        (up <= MAX_TABLE_PHASES).then(|| (0..up).map(|p| phase_taps(p as f64 / up as f64, cutoff)).collect());

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as isize;
        let phase = pos % up;
        let computed;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                computed = phase_taps(phase as f64 / up as f64, cutoff);
                &computed
            }
        };
        let mut acc = 0.0;
        for (j, h) in taps.iter().enumerate() {
            let idx = base + j as isize - HALF + 1;
            if idx >= 0 && (idx as usize) < signal.len() {
                acc += h * signal[idx as usize] as f64;
            }
        }
        out.push(acc as f32);
    }
    Ok(out)
}

fn phase_taps(frac: f64, cutoff: f64) -> [f64; TAPS] {
    let mut taps = [0.0; TAPS];
    for (j, tap) in taps.iter_mut().enumerate() {
        // Tap j reads input sample base + j - HALF + 1.
        let offset = (j as isize - HALF + 1) as f64 - frac;
        let u = offset / HALF as f64;
        *tap = 2.0 * cutoff * sinc(2.0 * cutoff * offset) * kaiser(u);
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn kaiser(u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_bit_exact() {
        let x: Vec<f32> = (0..1000).map(|i| (i as f32 * 0.01).sin()).collect();
        assert_eq!(resample(&x, 22050, 22050).unwrap(), x);
    }

    #[test]
    fn dc_passes_with_unit_gain() {
        let x = vec![0.5f32; 48000];
        for (from, to) in [(48000, 16000), (16000, 44100), (44100, 16000)] {
            let y = resample(&x, from, to).unwrap();
            // Ignore the edges, where the kernel hangs off the signal.
            let inner = &y[64..y.len() - 64];
            let mean = inner.iter().map(|&v| v as f64).sum::<f64>() / inner.len() as f64;
            assert!((mean - 0.5).abs() < 1e-3, "{from}->{to}: {mean}");
        }
    }

    #[test]
    fn output_length() {
        let x = vec![0.0f32; 48000];
        assert_eq!(resample(&x, 48000, 16000).unwrap().len(), 16000);
        assert_eq!(resample(&x[..10], 3, 2).unwrap().len(), 7);
    }

    #[test]
    fn rejects_zero_rate() {
        assert!(resample(&[0.0], 0, 16000).is_err());
    }

    #[test]
    fn bessel_matches_known_value() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-14);
    }
}
