//! Multilevel db2 discrete wavelet transform with half-sample symmetric
//! boundary extension at every level.
//!
//! Conventions follow the widely used PyWavelets layout: a level of analysis
//! maps `n` samples to `floor((n + 3) / 2)` coefficients per band, and
//! synthesis of `m` coefficients yields `2m - 2` samples, trimmed to the
//! length of the next finer band.

use crate::error::{Error, Result};

/// db2 analysis low-pass filter, `[1-r3, 3-r3, 3+r3, 1+r3] / (4 r2)` with
/// `r3 = sqrt(3)`, `r2 = sqrt(2)`.
pub const DB2_DEC_LO: [f64; 4] = [
    -0.12940952255126034,
    0.2241438680420134,
    0.8365163037378077,
    0.4829629131445341,
];

const F: usize = 4;

fn dec_hi() -> [f64; F] {
    let mut h = [0.0; F];
    for (j, v) in h.iter_mut().enumerate() {
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        *v = sign * DB2_DEC_LO[F - 1 - j];
    }
    h
}

fn reversed(h: [f64; F]) -> [f64; F] {
    let mut r = h;
    r.reverse();
    r
}

/// Half-sample symmetric index into `0..n`: `-1 -> 0`, `n -> n - 1`.
fn sym_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn analysis(x: &[f64], h: &[f64; F]) -> Vec<f64> {
    let n = x.len();
    let out_len = (n + F - 1) / 2;
    (0..out_len)
        .map(|o| {
            let centre = 2 * o + 1;
            if centre >= F - 1 && centre < n {
                h.iter().enumerate().map(|(j, hj)| hj * x[centre - j]).sum()
            } else {
                h.iter()
                    .enumerate()
                    .map(|(j, hj)| hj * x[sym_index(centre as isize - j as isize, n)])
                    .sum()
            }
        })
        .collect()
}

/// Upsample-and-filter both bands and keep the fully overlapped part.
fn synthesis(a: &[f64], d: &[f64]) -> Vec<f64> {
    let rec_lo = reversed(DB2_DEC_LO);
    let rec_hi = reversed(dec_hi());
    let m = a.len();
    let out_len = 2 * m + 2 - F;
    let mut out = vec![0.0; out_len];
    for (k, v) in out.iter_mut().enumerate() {
        let full = k + F - 2;
        let mut acc = 0.0;
        // full[p] = sum_i a[i] rec[p - 2i] with 0 <= p - 2i < F.
        let i_hi = full / 2;
        let i_lo = (full + 2).saturating_sub(F) / 2;
        for i in i_lo..=i_hi.min(m - 1) {
            let t = full - 2 * i;
            if t < F {
                acc += a[i] * rec_lo[t] + d[i] * rec_hi[t];
            }
        }
        *v = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    /// Coarsest approximation `A_L`.
    pub approx: Vec<f64>,
    /// `details[0]` is `D_1` (finest), `details[L-1]` is `D_L`.
    pub details: Vec<Vec<f64>>,
    /// Signal length before each analysis level, finest first.
    lengths: Vec<usize>,
}

impl WaveletDecomposition {
    pub fn levels(&self) -> usize {
        self.details.len()
    }
}

fn check_levels(n: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid("wavelet decomposition needs at least one level"));
    }
    if levels >= usize::BITS as usize || n < (1usize << levels) {
        return Err(Error::TooShort(format!(
            "{n} samples cannot support {levels} wavelet levels (need {})",
            1u128 << levels.min(127)
        )));
    }
    Ok(())
}

pub fn wavedec(x: &[f64], levels: usize) -> Result<WaveletDecomposition> {
    check_levels(x.len(), levels)?;
    let hi = dec_hi();
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        details.push(analysis(&approx, &hi));
        approx = analysis(&approx, &DB2_DEC_LO);
    }
    Ok(WaveletDecomposition {
        approx,
        details,
        lengths,
    })
}

pub fn waverec(dec: &WaveletDecomposition) -> Vec<f64> {
    let mut a = dec.approx.clone();
    for level in (0..dec.levels()).rev() {
        let d = &dec.details[level];
        a.truncate(d.len());
        let mut rec = synthesis(&a, d);
        rec.truncate(dec.lengths[level]);
        a = rec;
    }
    a
}

/// Which band of a decomposition to reconstruct in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Approx,
    /// Detail level, 1-based.
    Detail(usize),
}

/// Reconstructs a single band to the input length, all other bands zeroed.
pub fn band(x: &[f64], levels: usize, which: Band) -> Result<Vec<f64>> {
    if let Band::Detail(k) = which {
        if k == 0 || k > levels {
            return Err(Error::invalid(format!("detail level {k} outside 1..={levels}")));
        }
    }
    // Same as zeroing the other bands of `wavedec`, without computing them.
    check_levels(x.len(), levels)?;
    let hi = dec_hi();
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for level in 1..=levels {
        lengths.push(approx.len());
        let next = analysis(&approx, &DB2_DEC_LO);
        details.push(if which == Band::Detail(level) {
            analysis(&approx, &hi)
        } else {
            vec![0.0; next.len()]
        });
        approx = next;
    }
    if which != Band::Approx {
        approx.fill(0.0);
    }
    Ok(waverec(&WaveletDecomposition { approx, details, lengths }))
}

/// Translation-invariant version of [`band`]: the band is computed on every
/// one of the `2^levels` dyadic grid offsets and averaged.
pub fn band_invariant(x: &[f64], levels: usize, which: Band) -> Result<Vec<f64>> {
    let n = x.len();
    check_levels(n, levels)?;
    let shifts = 1usize << levels;
    let mut acc = vec![0.0; n];
    let mut ext = Vec::with_capacity(n + shifts);
    for s in 0..shifts {
        ext.clear();
        ext.extend((0..s).rev().map(|i| x[i.min(n - 1)]));
        ext.extend_from_slice(x);
        let b = band(&ext, levels, which)?;
        for (a, v) in acc.iter_mut().zip(&b[s..]) {
            *a += v;
        }
    }
    let scale = 1.0 / shifts as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(acc)
}
