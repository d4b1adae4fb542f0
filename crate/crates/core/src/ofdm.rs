//! Baseband OFDM link simulation and least-squares CFR estimation.
//!
//! The transmitter loads one QPSK symbol per subcarrier, applies an inverse
//! DFT scaled by `1/N` and prepends a cyclic prefix. The receiver strips the
//! prefix, applies an unscaled forward DFT and estimates each subcarrier's
//! complex gain from known symbols.

use std::cell::RefCell;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    Qpsk,
}

/// Link parameters. Defaults reproduce the N210 link: 64 subcarriers
/// (52 data, 12 pilot), a 16-sample cyclic prefix, 20 kS/s at 5.23 GHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub n_data: usize,
    pub n_pilot: usize,
    pub cp_len: usize,
    pub sample_rate: f64,
    pub carrier_freq: f64,
    pub modulation: Modulation,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            n_data: 52,
            n_pilot: 12,
            cp_len: 16,
            sample_rate: 20_000.0,
            carrier_freq: 5.23e9,
            modulation: Modulation::Qpsk,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 {
            return Err(Error::invalid("n_subcarriers must be positive"));
        }
        if self.n_data + self.n_pilot != self.n_subcarriers {
            return Err(Error::invalid(format!(
                "n_data ({}) + n_pilot ({}) != n_subcarriers ({})",
                self.n_data, self.n_pilot, self.n_subcarriers
            )));
        }
        if self.cp_len >= self.n_subcarriers {
            return Err(Error::invalid(format!(
                "cp_len {} must be shorter than the symbol ({})",
                self.cp_len, self.n_subcarriers
            )));
        }
        if !(self.sample_rate > 0.0) || !(self.carrier_freq > 0.0) {
            return Err(Error::invalid("sample_rate and carrier_freq must be positive"));
        }
        Ok(())
    }

    /// CFR frames per second: one per OFDM symbol including its prefix.
    pub fn symbol_rate(&self) -> f64 {
        self.sample_rate / (self.n_subcarriers + self.cp_len) as f64
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.sample_rate / self.n_subcarriers as f64
    }

    /// Pilot positions: `n_pilot` subcarriers at a stride of
    /// `n_subcarriers / n_pilot` (0, 5, 10, ..., 55 for the defaults).
    pub fn pilot_indices(&self) -> Vec<usize> {
        if self.n_pilot == 0 {
            return Vec::new();
        }
        let stride = (self.n_subcarriers / self.n_pilot).max(1);
        (0..self.n_pilot)
            .map(|i| (i * stride) % self.n_subcarriers)
            .collect()
    }
}

/// A vector of finite complex baseband samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexVec(Vec<Complex64>);

impl ComplexVec {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid(format!("non-finite complex value at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }
}

impl std::ops::Index<usize> for ComplexVec {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// One estimated channel frequency response.
#[derive(Debug, Clone, PartialEq)]
pub struct CfrFrame {
    pub h: ComplexVec,
    pub symbol_index: usize,
    pub timestamp: f64,
}

impl CfrFrame {
    pub fn new(h: ComplexVec, symbol_index: usize, symbol_rate: f64) -> Self {
        Self {
            h,
            symbol_index,
            timestamp: symbol_index as f64 / symbol_rate,
        }
    }
}

/// Gray-coded QPSK: 00 -> (1+j), 01 -> (-1+j), 11 -> (-1-j), 10 -> (1-j),
/// all scaled by 1/sqrt(2). The first bit of a pair selects the imaginary
/// sign, the second the real sign.
pub fn map_qpsk(bits: &[u8]) -> Result<ComplexVec> {
    if bits.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "QPSK needs an even bit count, got {}",
            bits.len()
        )));
    }
    let symbols = bits
        .chunks_exact(2)
        .map(|pair| {
            let (b0, b1) = (pair[0] & 1, pair[1] & 1);
            let im = if b0 == 0 { 1.0 } else { -1.0 };
            let re = if b0 == b1 { im } else { -im };
            Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        })
        .collect();
    Ok(ComplexVec(symbols))
}

fn check_len(op: &'static str, v: &ComplexVec, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::shape(
            op,
            format!("expected length {expected}, got {}", v.len()),
        ));
    }
    Ok(())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let plan = PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        if inverse {
            planner.plan_fft_inverse(buf.len())
        } else {
            planner.plan_fft_forward(buf.len())
        }
    });
    plan.process(buf);
}

/// `x[n] = (1/N) sum_k d_k exp(j 2 pi k n / N)`.
pub fn ofdm_modulate(d: &ComplexVec, cfg: &OfdmConfig) -> Result<ComplexVec> {
    check_len("ofdm_modulate", d, cfg.n_subcarriers)?;
    let mut buf = d.0.clone();
    fft_in_place(&mut buf, true);
    let scale = 1.0 / cfg.n_subcarriers as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(ComplexVec(buf))
}

/// `Y[k] = sum_n y[n] exp(-j 2 pi k n / N)`; the prefix must already be removed.
pub fn ofdm_demodulate(y: &ComplexVec, cfg: &OfdmConfig) -> Result<ComplexVec> {
    check_len("ofdm_demodulate", y, cfg.n_subcarriers)?;
    let mut buf = y.0.clone();
    fft_in_place(&mut buf, false);
    Ok(ComplexVec(buf))
}

pub fn add_cyclic_prefix(x: &ComplexVec, cfg: &OfdmConfig) -> Result<ComplexVec> {
    check_len("add_cyclic_prefix", x, cfg.n_subcarriers)?;
    let n = cfg.n_subcarriers;
    let mut out = Vec::with_capacity(n + cfg.cp_len);
    out.extend_from_slice(&x.0[n - cfg.cp_len..]);
    out.extend_from_slice(&x.0);
    Ok(ComplexVec(out))
}

pub fn remove_cyclic_prefix(x: &ComplexVec, cfg: &OfdmConfig) -> Result<ComplexVec> {
    check_len("remove_cyclic_prefix", x, cfg.n_subcarriers + cfg.cp_len)?;
    Ok(ComplexVec(x.0[cfg.cp_len..].to_vec()))
}

/// Passes one prefixed time-domain symbol through a per-subcarrier channel.
///
/// The channel acts as a circular convolution over the symbol body (the
/// prefix absorbs it), so it is applied as a multiplication of the DFT of the
/// body; the prefix is then rebuilt from the filtered body. Circular complex
/// Gaussian noise with variance `noise_var / 2` per component is added to
/// every output sample.
pub fn apply_channel(
    tx: &ComplexVec,
    h: &ComplexVec,
    noise_var: f64,
    seed: u64,
) -> Result<ComplexVec> {
    if !(noise_var >= 0.0) {
        return Err(Error::invalid(format!("noise_var must be >= 0, got {noise_var}")));
    }
    let n = h.len();
    if n == 0 || tx.len() < n {
        return Err(Error::shape(
            "apply_channel",
            format!("symbol of length {} cannot carry {n} subcarriers", tx.len()),
        ));
    }
    let cp = tx.len() - n;
    let mut body = tx.0[cp..].to_vec();
    fft_in_place(&mut body, false);
    for (v, g) in body.iter_mut().zip(h.iter()) {
        *v *= g;
    }
    fft_in_place(&mut body, true);
    let scale = 1.0 / n as f64;
    body.iter_mut().for_each(|v| *v *= scale);

    let mut out = Vec::with_capacity(tx.len());
    out.extend_from_slice(&body[n - cp..]);
    out.extend_from_slice(&body);
    if noise_var > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (noise_var / 2.0).sqrt()).expect("finite std");
        for v in &mut out {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(ComplexVec(out))
}

/// Per-subcarrier least squares over stacked observations:
/// `h_k = (d_k^H d_k)^-1 d_k^H y_k`.
pub fn ls_estimate(d_obs: &[ComplexVec], y_obs: &[ComplexVec]) -> Result<ComplexVec> {
    if d_obs.is_empty() || d_obs.len() != y_obs.len() {
        return Err(Error::invalid(format!(
            "need equal, nonzero observation counts (got {} symbols, {} responses)",
            d_obs.len(),
            y_obs.len()
        )));
    }
    let n = d_obs[0].len();
    for (d, y) in d_obs.iter().zip(y_obs) {
        check_len("ls_estimate", d, n)?;
        check_len("ls_estimate", y, n)?;
    }
    let mut h = Vec::with_capacity(n);
    for k in 0..n {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for (d, y) in d_obs.iter().zip(y_obs) {
            num += d[k].conj() * y[k];
            den += d[k].norm_sqr();
        }
        if den == 0.0 {
            return Err(Error::SingularEstimate { subcarrier: k });
        }
        h.push(num / den);
    }
    Ok(ComplexVec(h))
}

/// End-to-end sounding of one channel realisation: `n_obs` random QPSK
/// training symbols are sent through `h` and the CFR is re-estimated at the
/// receiver.
pub fn sound_channel(
    h: &ComplexVec,
    cfg: &OfdmConfig,
    n_obs: usize,
    noise_var: f64,
    seed: u64,
) -> Result<ComplexVec> {
    use rand::Rng;
    check_len("sound_channel", h, cfg.n_subcarriers)?;
    if n_obs == 0 {
        return Err(Error::invalid("sound_channel needs at least one observation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d_obs = Vec::with_capacity(n_obs);
    let mut y_obs = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let bits: Vec<u8> = (0..2 * cfg.n_subcarriers)
            .map(|_| rng.random_range(0..2u8))
            .collect();
        let d = map_qpsk(&bits)?;
        let tx = add_cyclic_prefix(&ofdm_modulate(&d, cfg)?, cfg)?;
        let rx = apply_channel(&tx, h, noise_var, rng.random())?;
        let y = ofdm_demodulate(&remove_cyclic_prefix(&rx, cfg)?, cfg)?;
        d_obs.push(d);
        y_obs.push(y);
    }
    ls_estimate(&d_obs, &y_obs)
}
