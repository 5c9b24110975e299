use std::f64::consts::PI;

/// Precomputed orthonormal DCT-II basis mapping `n_in` inputs to the first
/// `n_out` coefficients.
#[derive(Debug, Clone)]
pub struct DctPlan {
    n_in: usize,
    n_out: usize,
    basis: Vec<f64>,
}

impl DctPlan {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        assert!(n_in > 0, "DCT input length must be positive");
        assert!(n_out <= n_in, "cannot request more DCT coefficients than inputs");
        let mut basis = Vec::with_capacity(n_in * n_out);
        for k in 0..n_out {
            let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
            for n in 0..n_in {
                basis.push(scale * (PI / n_in as f64 * (n as f64 + 0.5) * k as f64).cos());
            }
        }
        Self { n_in, n_out, basis }
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.n_in, "DCT input length mismatch");
        self.basis.chunks_exact(self.n_in).map(|row| row.iter().zip(input).map(|(b, x)| b * x).sum()).collect()
    }
}

/// Orthonormal DCT-II, keeping the first `n_out` coefficients.
pub fn dct_ii(input: &[f64], n_out: usize) -> Vec<f64> {
    DctPlan::new(input.len(), n_out).apply(input)
}

/// Orthonormal DCT-III, the inverse of a full-length [`dct_ii`].
pub fn dct_iii(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    (0..n)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                    scale * c * (PI / n as f64 * (i as f64 + 0.5) * k as f64).cos()
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_only_dc() {
        let out = dct_ii(&[3.0; 16], 16);
        assert!((out[0] - 3.0 * 16f64.sqrt()).abs() < 1e-12);
        assert!(out[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn length_two_closed_form() {
        let (a, b) = (0.7, -1.9);
        let out = dct_ii(&[a, b], 2);
        assert!((out[0] - (a + b) / 2f64.sqrt()).abs() < 1e-15);
        assert!((out[1] - (a - b) / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn inverse_round_trip() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 31 % 17) as f64 - 8.0) / 3.0).collect();
        let back = dct_ii(&dct_iii(&x), 40);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn truncated_output() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let full = dct_ii(&x, 40);
        let short = dct_ii(&x, 13);
        assert_eq!(&full[..13], &short[..]);
    }
}
