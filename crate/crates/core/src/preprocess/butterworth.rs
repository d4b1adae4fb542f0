//! Digital Butterworth low-pass as cascaded second-order sections, applied
//! forward and backward for zero phase.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Largest pole magnitude.
    pub fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[1], self.a[2]);
        if a2 == 0.0 {
            return a1.abs();
        }
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        let r1 = (-a1 + disc) / 2.0;
        let r2 = (-a1 - disc) / 2.0;
        r1.norm().max(r2.norm())
    }

    /// Magnitude response at `f` Hz for sample rate `rate`.
    pub fn gain_at(&self, f: f64, rate: f64) -> f64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / rate);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = self.a[0] + self.a[1] * z1 + self.a[2] * z2;
        (num / den).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    LowPass,
    HighPass,
}

/// Low-pass design via the bilinear transform with frequency prewarping.
/// Every section is normalized to unit DC gain.
pub fn butterworth_sos(order: usize, cutoff: f64, rate: f64) -> Result<Vec<Sos>> {
    design(order, cutoff, rate, Response::LowPass)
}

/// High-pass counterpart of [`butterworth_sos`], unit gain at Nyquist.
pub fn butterworth_highpass_sos(order: usize, cutoff: f64, rate: f64) -> Result<Vec<Sos>> {
    design(order, cutoff, rate, Response::HighPass)
}

fn design(order: usize, cutoff: f64, rate: f64, response: Response) -> Result<Vec<Sos>> {
    if order == 0 {
        return Err(Error::FilterDesign("order must be at least 1".into()));
    }
    if !(cutoff > 0.0 && cutoff < rate / 2.0) {
        return Err(Error::FilterDesign(format!(
            "cutoff {cutoff} Hz must lie in (0, {})",
            rate / 2.0
        )));
    }
    let fs2 = 2.0 * rate;
    let wa = fs2 * (PI * cutoff / rate).tan();
    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
    // A high-pass is the low-pass prototype under s -> wa^2 / s, which maps
    // each pole p to wa^2 / p and moves the zeros from z = -1 to z = 1.
    let analog_pole = |p: Complex64| match response {
        Response::LowPass => p,
        Response::HighPass => wa * wa / p,
    };
    let zero_sign = match response {
        Response::LowPass => 1.0,
        Response::HighPass => -1.0,
    };
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let z = bilinear(analog_pole(Complex64::from_polar(wa, theta)));
        let a = [1.0, -2.0 * z.re, z.norm_sqr()];
        let g = (a[0] + zero_sign * a[1] + a[2]) / 4.0;
        sections.push(Sos {
            b: [g, 2.0 * zero_sign * g, g],
            a,
        });
    }
    if order % 2 == 1 {
        let z = bilinear(analog_pole(Complex64::new(-wa, 0.0))).re;
        let g = (1.0 - zero_sign * z) / 2.0;
        sections.push(Sos {
            b: [g, zero_sign * g, 0.0],
            a: [1.0, -z, 0.0],
        });
    }
    for (i, s) in sections.iter().enumerate() {
        let r = s.pole_radius();
        if !(r < 1.0) {
            return Err(Error::FilterDesign(format!(
                "section {i} has pole radius {r} >= 1"
            )));
        }
    }
    Ok(sections)
}

/// Transposed direct form II state that a unit-step input holds in steady
/// state, per section.
fn step_state(sos: &[Sos]) -> Vec<[f64; 2]> {
    let mut input = 1.0;
    sos.iter()
        .map(|s| {
            let y = input * s.dc_gain();
            let z1 = s.b[2] * input - s.a[2] * y;
            let z0 = s.b[1] * input - s.a[1] * y + z1;
            input = y;
            [z0, z1]
        })
        .collect()
}

fn sosfilt(sos: &[Sos], x: &mut [f64], zi: &[[f64; 2]], x0: f64) {
    for (s, z) in sos.iter().zip(zi) {
        let (mut z0, mut z1) = (z[0] * x0, z[1] * x0);
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b[0] * xin + z0;
            z0 = s.b[1] * xin - s.a[1] * y + z1;
            z1 = s.b[2] * xin - s.a[2] * y;
            *v = y;
        }
    }
}

/// Default odd-extension pad length for a cascade.
pub fn default_padlen(sos: &[Sos]) -> usize {
    let trailing_b = sos.iter().filter(|s| s.b[2] == 0.0).count();
    let trailing_a = sos.iter().filter(|s| s.a[2] == 0.0).count();
    3 * (2 * sos.len() + 1 - trailing_b.min(trailing_a))
}

/// Forward-backward filtering with odd extension and steady-state initial
/// conditions.
pub fn sosfiltfilt(sos: &[Sos], x: &[f64]) -> Result<Vec<f64>> {
    let pad = default_padlen(sos);
    let n = x.len();
    if n <= pad {
        return Err(Error::TooShort(format!(
            "zero-phase filtering needs more than {pad} samples, got {n}"
        )));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let zi = step_state(sos);
    let first = ext[0];
    sosfilt(sos, &mut ext, &zi, first);
    ext.reverse();
    let first = ext[0];
    sosfilt(sos, &mut ext, &zi, first);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

pub fn butterworth_lowpass(x: &[f64], rate: f64, cutoff: f64, order: usize) -> Result<Vec<f64>> {
    sosfiltfilt(&butterworth_sos(order, cutoff, rate)?, x)
}

pub fn butterworth_highpass(x: &[f64], rate: f64, cutoff: f64, order: usize) -> Result<Vec<f64>> {
    sosfiltfilt(&butterworth_highpass_sos(order, cutoff, rate)?, x)
}

/// Analytic magnitude of an order-`n` Butterworth low-pass.
pub fn analytic_gain(f: f64, cutoff: f64, order: usize) -> f64 {
    1.0 / (1.0 + (f / cutoff).powi(2 * order as i32)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / rate).sin()).collect()
    }

    fn central_peak(x: &[f64]) -> f64 {
        let q = x.len() / 4;
        x[q..x.len() - q].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn design_is_stable_with_unit_dc() {
        let sos = butterworth_sos(12, 4.0, 200.0).unwrap();
        assert_eq!(sos.len(), 6);
        let dc: f64 = sos.iter().map(Sos::dc_gain).product();
        assert!((dc - 1.0).abs() < 1e-12);
        assert!(sos.iter().all(|s| s.pole_radius() < 1.0));
        assert_eq!(default_padlen(&sos), 39);
    }

    #[test]
    fn response_matches_analytic_magnitude_at_prewarped_cutoff() {
        // The bilinear map is exact at the cutoff itself.
        let sos = butterworth_sos(12, 4.0, 200.0).unwrap();
        let g: f64 = sos.iter().map(|s| s.gain_at(4.0, 200.0)).product();
        assert!((g - 0.5f64.sqrt()).abs() < 1e-9);
        for order in [1, 3, 5] {
            let sos = butterworth_sos(order, 10.0, 100.0).unwrap();
            let g: f64 = sos.iter().map(|s| s.gain_at(10.0, 100.0)).product();
            assert!((g - 0.5f64.sqrt()).abs() < 1e-9, "order {order}");
        }
    }

    #[test]
    fn passband_and_stopband() {
        let x = sine(1.0, 200.0, 4000);
        let y = butterworth_lowpass(&x, 200.0, 4.0, 12).unwrap();
        let expect = analytic_gain(1.0, 4.0, 12).powi(2);
        assert!((central_peak(&y) - expect).abs() < 5e-3);
        let x8 = sine(8.0, 200.0, 4000);
        let y8 = butterworth_lowpass(&x8, 200.0, 4.0, 12).unwrap();
        assert!(central_peak(&y8) < 1e-7, "{}", central_peak(&y8));
    }

    #[test]
    fn highpass_mirrors_lowpass() {
        let sos = butterworth_highpass_sos(8, 0.7, 250.0).unwrap();
        let g = |f: f64| sos.iter().map(|s| s.gain_at(f, 250.0)).product::<f64>();
        assert!((g(0.7) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((g(125.0) - 1.0).abs() < 1e-12);
        assert!(g(0.3) < 2e-3);
        assert!((g(1.5) - 1.0).abs() < 1e-3);
        let odd = butterworth_highpass_sos(3, 5.0, 100.0).unwrap();
        let g3: f64 = odd.iter().map(|s| s.gain_at(5.0, 100.0)).product();
        assert!((g3 - 0.5f64.sqrt()).abs() < 1e-9);
        let y = butterworth_highpass(&[4.0; 400], 250.0, 0.7, 8).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn constant_passes_unchanged() {
        let y = butterworth_lowpass(&[2.5; 300], 200.0, 4.0, 12).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-9));
    }

    #[test]
    fn bad_designs_are_rejected() {
        assert!(butterworth_sos(12, 0.0, 200.0).is_err());
        assert!(butterworth_sos(12, 100.0, 200.0).is_err());
        assert!(butterworth_sos(0, 4.0, 200.0).is_err());
        assert!(butterworth_lowpass(&[1.0; 30], 200.0, 4.0, 12).is_err());
    }
}
