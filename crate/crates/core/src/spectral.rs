//! Unnormalized DCT-II and its exact inverse.
//!
//! `X[k] = sum_n x[n] cos(pi/N (n + 1/2) k)` and
//! `x[n] = (1/N) (X[0] + 2 sum_{k>=1} X[k] cos(pi/N (n + 1/2) k))`.
//! No orthonormal scaling is applied. Both directions run through a single
//! length-N complex FFT using Makhoul's even/odd reordering.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// DCT coefficients of one real sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DctCoeffs(pub Vec<f64>);

impl DctCoeffs {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// FFT plans and twiddles for one transform length, reusable across calls.
pub struct DctPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex64>,
}

impl DctPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("DCT length must be at least 1"));
        }
        let mut planner = FftPlanner::new();
        let twiddle = (0..n)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / (2 * n) as f64))
            .collect();
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            twiddle,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, x: &[f64]) -> Result<DctCoeffs> {
        let n = self.n;
        if x.len() != n {
            return Err(Error::shape("dct2", format!("plan length {n}, input {}", x.len())));
        }
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n.div_ceil(2) {
            v[i].re = x[2 * i];
        }
        for i in 0..n / 2 {
            v[n - 1 - i].re = x[2 * i + 1];
        }
        self.forward.process(&mut v);
        Ok(DctCoeffs(
            v.iter().zip(&self.twiddle).map(|(a, w)| (a * w).re).collect(),
        ))
    }

    pub fn inverse(&self, coeffs: &DctCoeffs) -> Result<Vec<f64>> {
        let n = self.n;
        let big_x = coeffs.as_slice();
        if big_x.len() != n {
            return Err(Error::shape(
                "idct2",
                format!("plan length {n}, input {}", big_x.len()),
            ));
        }
        let mut v: Vec<Complex64> = (0..n)
            .map(|k| {
                let mirror = if k == 0 { 0.0 } else { big_x[n - k] };
                Complex64::new(big_x[k], -mirror) * self.twiddle[k].conj()
            })
            .collect();
        self.inverse.process(&mut v);
        let scale = 1.0 / n as f64;
        let mut x = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            x[2 * i] = v[i].re * scale;
        }
        for i in 0..n / 2 {
            x[2 * i + 1] = v[n - 1 - i].re * scale;
        }
        Ok(x)
    }
}

pub fn dct2(x: &[f64]) -> Result<DctCoeffs> {
    DctPlan::new(x.len())?.forward(x)
}

pub fn idct2(coeffs: &DctCoeffs) -> Result<Vec<f64>> {
    DctPlan::new(coeffs.len())?.inverse(coeffs)
}

/// The inverse transform as a dense `N x N` row-major matrix `M` with
/// `x = M X`, for use inside differentiable graphs.
pub fn idct2_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for row in 0..n {
        for k in 0..n {
            let w = if k == 0 { 1.0 } else { 2.0 };
            m[row * n + k] = w * (PI / n as f64 * (row as f64 + 0.5) * k as f64).cos() / n as f64;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dct(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI / n * (i as f64 + 0.5) * k as f64).cos())
                    .sum()
            })
            .collect()
    }

    fn direct_idct(big_x: &[f64]) -> Vec<f64> {
        let n = big_x.len() as f64;
        (0..big_x.len())
            .map(|i| {
                let tail: f64 = big_x
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, v)| v * (PI / n * (i as f64 + 0.5) * k as f64).cos())
                    .sum();
                (big_x[0] + 2.0 * tail) / n
            })
            .collect()
    }

    fn random(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constant_and_zero_inputs() {
        let x = dct2(&[1.0; 4]).unwrap();
        for (a, b) in x.as_slice().iter().zip([4.0, 0.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(dct2(&[0.0; 4]).unwrap().as_slice().iter().all(|v| *v == 0.0));
        let back = idct2(&DctCoeffs(vec![4.0, 0.0, 0.0, 0.0])).unwrap();
        for v in back {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(idct2(&DctCoeffs(vec![0.0; 5])).unwrap().iter().all(|v| *v == 0.0));
        assert!(dct2(&[]).is_err());
    }

    #[test]
    fn fast_path_matches_direct_sum() {
        for &n in &[1usize, 2, 3, 7, 64, 450] {
            let x = random(n as u64, n);
            let fast = dct2(&x).unwrap();
            for (a, b) in fast.as_slice().iter().zip(direct_dct(&x)) {
                assert!((a - b).abs() < 1e-9, "n={n}");
            }
            let fast_inv = idct2(&DctCoeffs(x.clone())).unwrap();
            for (a, b) in fast_inv.iter().zip(direct_idct(&x)) {
                assert!((a - b).abs() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn round_trip_lengths() {
        for &n in &[1usize, 2, 7, 64, 450] {
            let x = random(100 + n as u64, n);
            let back = idct2(&dct2(&x).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matrix_form_matches_inverse() {
        let n = 17;
        let big_x = random(7, n);
        let m = idct2_matrix(n);
        let via_matrix: Vec<f64> = (0..n)
            .map(|r| (0..n).map(|k| m[r * n + k] * big_x[k]).sum())
            .collect();
        for (a, b) in via_matrix.iter().zip(direct_idct(&big_x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn linearity(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = random(seed, 64);
            let y = random(seed + 1, 64);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = dct2(&mix).unwrap();
            let (dx, dy) = (dct2(&x).unwrap(), dct2(&y).unwrap());
            for i in 0..64 {
                let rhs = a * dx.0[i] + b * dy.0[i];
                prop_assert!((lhs.0[i] - rhs).abs() < 1e-9);
            }
        }
    }
}
