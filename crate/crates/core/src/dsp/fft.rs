use std::f64::consts::PI;

use super::DspError;

/// In-place iterative radix-2 FFT. `inverse` flips the twiddle sign and
/// does not scale.
pub(crate) fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }

    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<(f64, f64)> = (0..half)
            .map(|k| {
                let angle = sign * 2.0 * PI * k as f64 / len as f64;
                (angle.cos(), angle.sin())
            })
            .collect();
        for start in (0..n).step_by(len) {
            for (k, &(wr, wi)) in twiddles.iter().enumerate() {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len *= 2;
    }
}

/// Forward unnormalized DFT of a real or complex sequence of power-of-two
/// length. Returns `(re, im)`.
pub fn fft(re: &[f64], im: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DspError> {
    check_len(re.len(), im.len())?;
    let mut r = re.to_vec();
    let mut i = im.to_vec();
    fft_in_place(&mut r, &mut i, false);
    Ok((r, i))
}

/// Inverse DFT scaled by `1/n`, so `ifft(fft(x)) == x` up to rounding.
pub fn ifft(re: &[f64], im: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DspError> {
    check_len(re.len(), im.len())?;
    let n = re.len() as f64;
    let mut r = re.to_vec();
    let mut i = im.to_vec();
    fft_in_place(&mut r, &mut i, true);
    r.iter_mut().for_each(|v| *v /= n);
    i.iter_mut().for_each(|v| *v /= n);
    Ok((r, i))
}

fn check_len(re: usize, im: usize) -> Result<(), DspError> {
    if re != im {
        return Err(DspError::InvalidArgument(format!("real and imaginary parts differ in length ({re} vs {im})")));
    }
    if re == 0 {
        return Err(DspError::EmptySignal);
    }
    if !re.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(re));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = re.len();
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for k in 0..n {
            for t in 0..n {
                let angle = -2.0 * PI * (k * t) as f64 / n as f64;
                out_re[k] += re[t] * angle.cos() - im[t] * angle.sin();
                out_im[k] += re[t] * angle.sin() + im[t] * angle.cos();
            }
        }
        (out_re, out_im)
    }

    #[test]
    fn matches_naive_dft() {
        let re: Vec<f64> = (0..64).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let im: Vec<f64> = (0..64).map(|i| ((i * 104729) % 89) as f64 / 89.0 - 0.5).collect();
        let (fr, fi) = fft(&re, &im).unwrap();
        let (nr, ni) = naive_dft(&re, &im);
        for k in 0..64 {
            assert!((fr[k] - nr[k]).abs() < 1e-9);
            assert!((fi[k] - ni[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let re: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin()).collect();
        let im = vec![0.0; 256];
        let (fr, fi) = fft(&re, &im).unwrap();
        let (rr, ri) = ifft(&fr, &fi).unwrap();
        for k in 0..256 {
            assert!((rr[k] - re[k]).abs() < 1e-12);
            assert!(ri[k].abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(fft(&[0.0; 6], &[0.0; 6]), Err(DspError::NotPowerOfTwo(6)));
    }
}
