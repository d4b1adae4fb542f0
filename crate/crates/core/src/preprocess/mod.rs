//! Conditioning of radio and PPG streams into aligned, z-scored segments.
//!
//! Radio path: channel selection, lag compensation, real/imaginary
//! expansion, windowing, resampling to the model length, z-scoring.
//! PPG path: wavelet detrending, zero-phase low-pass, windowing, resampling,
//! z-scoring. The lag between the two comes from maximizing the inner
//! product between the cardiac wavelet band (D7 at 250 Hz) of the radio and
//! the same band of the conditioned PPG, resampled to the radio rate.

pub mod align;
pub mod butterworth;
pub mod wavelet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use align::{align, AlignmentResult};
pub use butterworth::{butterworth_highpass, butterworth_lowpass};

use crate::dataset::SubjectRecording;
use crate::error::{Error, Result};
use crate::physio::{PpgRecording, RadioRecording, VitalsRecord};
use crate::Complex64;
use wavelet::Band;

/// One aligned training example.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    /// `n_rows x len` row-major; rows are `[re_0.., im_0..]`.
    pub radio: Vec<f64>,
    pub n_rows: usize,
    /// Per-channel magnitude, `n_rows / 2 x len`, z-scored per row.
    pub magnitude: Vec<f64>,
    pub ppg: Vec<f64>,
    pub subject_id: String,
    pub segment_index: usize,
    pub augmented: bool,
    /// Segment-mean `[hr, spo2, rr]` when labels are available.
    pub vitals: Option<[f64; 3]>,
}

impl SegmentPair {
    pub fn len(&self) -> usize {
        self.ppg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ppg.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_rows / 2
    }

    pub fn radio_row(&self, r: usize) -> &[f64] {
        let n = self.len();
        &self.radio[r * n..(r + 1) * n]
    }

    pub fn magnitude_row(&self, r: usize) -> &[f64] {
        let n = self.len();
        &self.magnitude[r * n..(r + 1) * n]
    }
}

/// Uniform-stride subcarrier indices `floor(i * total / n_ch)`.
pub fn channel_indices(n_ch: usize, total: usize) -> Result<Vec<usize>> {
    if n_ch == 0 || n_ch > total {
        return Err(Error::invalid(format!("n_ch must be in 1..={total}, got {n_ch}")));
    }
    Ok((0..n_ch).map(|i| i * total / n_ch).collect())
}

pub fn select_channels(rec: &RadioRecording, n_ch: usize) -> Result<RadioRecording> {
    let idx = channel_indices(n_ch, rec.n_subcarriers())?;
    select_channel_list(rec, &idx)
}

pub fn select_channel_list(rec: &RadioRecording, idx: &[usize]) -> Result<RadioRecording> {
    let total = rec.n_subcarriers();
    if idx.is_empty() || idx.iter().any(|&k| k >= total) {
        return Err(Error::invalid(format!(
            "channel list {idx:?} invalid for {total} subcarriers"
        )));
    }
    let frames = rec
        .frames
        .iter()
        .map(|f| {
            let h = idx.iter().map(|&k| f.h[k]).collect();
            Ok(crate::ofdm::CfrFrame {
                h: crate::ofdm::ComplexVec::new(h)?,
                symbol_index: f.symbol_index,
                timestamp: f.timestamp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RadioRecording {
        frames,
        rate: rec.rate,
        subject_id: rec.subject_id.clone(),
    })
}

/// Rows `[re_0..re_{n-1}, im_0..im_{n-1}]`, each a time series.
pub fn expand_complex(rec: &RadioRecording) -> Vec<Vec<f64>> {
    let n = rec.n_subcarriers();
    let mut rows = vec![Vec::with_capacity(rec.frames.len()); 2 * n];
    for f in &rec.frames {
        for (k, h) in f.h.iter().enumerate() {
            rows[k].push(h.re);
            rows[n + k].push(h.im);
        }
    }
    rows
}

/// Inverse of [`expand_complex`].
pub fn recombine_complex(rows: &[Vec<f64>]) -> Result<Vec<Vec<Complex64>>> {
    if rows.len() % 2 != 0 {
        return Err(Error::shape("recombine_complex", "odd number of rows"));
    }
    let n = rows.len() / 2;
    Ok((0..n)
        .map(|k| {
            rows[k]
                .iter()
                .zip(&rows[n + k])
                .map(|(&re, &im)| Complex64::new(re, im))
                .collect()
        })
        .collect())
}

fn window_len(rate: f64, win_s: f64) -> Result<usize> {
    let w = (rate * win_s).round();
    if !(w >= 1.0) {
        return Err(Error::invalid("window must hold at least one sample"));
    }
    Ok(w as usize)
}

/// Non-overlapping windows of `win_s` seconds; the remainder is dropped.
pub fn segment(x: &[f64], rate: f64, win_s: f64) -> Result<Vec<Vec<f64>>> {
    let w = window_len(rate, win_s)?;
    if x.len() < w {
        return Err(Error::TooShort(format!(
            "{} s stream is shorter than one {win_s} s window",
            x.len() as f64 / rate
        )));
    }
    Ok(x.chunks_exact(w).map(<[f64]>::to_vec).collect())
}

/// Windows of a multi-row stream: `out[j][r]` is row `r` of window `j`.
pub fn segment_rows(rows: &[Vec<f64>], rate: f64, win_s: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    let per_row = rows
        .iter()
        .map(|r| segment(r, rate, win_s))
        .collect::<Result<Vec<_>>>()?;
    let count = per_row.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..count)
        .map(|j| per_row.iter().map(|r| r[j].clone()).collect())
        .collect())
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero mean, unit population standard deviation.
pub fn zscore(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Degenerate("empty segment".into()));
    }
    let (mean, sd) = mean_std(x);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("constant segment".into()));
    }
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

/// Linear interpolation onto `out_len` points spanning the same interval.
pub fn resample_to(x: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if x.len() < 2 || out_len < 2 {
        return Err(Error::invalid("resampling needs at least 2 input and output points"));
    }
    let n = x.len();
    let span = (n - 1) as f64;
    let steps = (out_len - 1) as f64;
    Ok((0..out_len)
        .map(|i| {
            let p = i as f64 * span / steps;
            let j = (p.floor() as usize).min(n - 2);
            let frac = p - j as f64;
            if frac == 0.0 {
                x[j]
            } else {
                x[j] + frac * (x[j + 1] - x[j])
            }
        })
        .collect())
}

/// Samples `x` (rate `from`) at `n` points of rate `to`, linearly.
fn rate_convert(x: &[f64], from: f64, to: f64, n: usize) -> Vec<f64> {
    let last = x.len() - 1;
    (0..n)
        .map(|i| {
            let p = i as f64 * from / to;
            let j = (p.floor() as usize).min(last);
            if j == last {
                x[last]
            } else {
                x[j] + (p - j as f64) * (x[j + 1] - x[j])
            }
        })
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Appends one noisy copy of every pair. Each copy's noise stream is seeded
/// from `seed`, the subject id and the segment index.
pub fn augment(pairs: &[SegmentPair], noise_var: f64, seed: u64) -> Result<Vec<SegmentPair>> {
    if !(noise_var >= 0.0) {
        return Err(Error::invalid("noise_var must be >= 0"));
    }
    let normal = Normal::new(0.0, noise_var.sqrt()).expect("finite std");
    let mut out = pairs.to_vec();
    for p in pairs {
        let mix = seed ^ fnv1a(&p.subject_id).rotate_left(17) ^ (p.segment_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(mix);
        let mut q = p.clone();
        q.augmented = true;
        if noise_var > 0.0 {
            for v in q.radio.iter_mut().chain(q.magnitude.iter_mut()).chain(q.ppg.iter_mut()) {
                *v += normal.sample(&mut rng);
            }
        }
        out.push(q);
    }
    Ok(out)
}

/// Subtracts the level-`levels` db2 approximation.
pub fn detrend_wavelet(ppg: &PpgRecording, levels: usize) -> Result<PpgRecording> {
    let trend = wavelet::band(&ppg.samples, levels, Band::Approx)?;
    Ok(PpgRecording {
        samples: ppg.samples.iter().zip(trend).map(|(x, t)| x - t).collect(),
        rate: ppg.rate,
    })
}

/// Level-7 db2 detail band reconstructed to the input length.
pub fn extract_d7(x: &[f64], _rate: f64) -> Result<Vec<f64>> {
    wavelet::band(x, 7, Band::Detail(7))
}

/// Cycle-spun D7: the average of [`extract_d7`] over all 128 dyadic grid
/// offsets, so that shifting the input shifts the output.
pub fn extract_d7_invariant(x: &[f64], _rate: f64) -> Result<Vec<f64>> {
    wavelet::band_invariant(x, 7, Band::Detail(7))
}

/// Radio summary used as the alignment reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignSignal {
    /// Mean subcarrier magnitude.
    MeanMagnitude,
    /// Mean unwrapped phase of each subcarrier around its fitted static
    /// component, which is proportional to chest displacement.
    ReflectionPhase,
}

/// Algebraic least-squares circle fit; returns the centre.
fn circle_centre(points: &[Complex64]) -> Option<Complex64> {
    let n = points.len() as f64;
    let m = points.iter().sum::<Complex64>() / n;
    // Centred coordinates improve conditioning.
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    let (mut suuu, mut svvv, mut suvv, mut svuu) = (0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (u, v) = (p.re - m.re, p.im - m.im);
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suuu += u * u * u;
        svvv += v * v * v;
        suvv += u * v * v;
        svuu += v * u * u;
    }
    let det = suu * svv - suv * suv;
    if !(det.abs() > 1e-300) {
        return None;
    }
    let r1 = 0.5 * (suuu + suvv);
    let r2 = 0.5 * (svvv + svuu);
    let uc = (r1 * svv - r2 * suv) / det;
    let vc = (suu * r2 - suv * r1) / det;
    let c = Complex64::new(m.re + uc, m.im + vc);
    c.is_finite().then_some(c)
}

fn unwrap_phase(z: impl Iterator<Item = Complex64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in z {
        let ph = v.arg();
        match out.last() {
            None => out.push(ph),
            Some(&prev) => {
                let mut step = ph - prev;
                step -= 2.0 * std::f64::consts::PI * (step / (2.0 * std::f64::consts::PI)).round();
                out.push(prev + step);
            }
        }
    }
    out
}

pub fn alignment_signal(rec: &RadioRecording, kind: AlignSignal) -> Result<Vec<f64>> {
    let n = rec.frames.len();
    let n_ch = rec.n_subcarriers();
    if n == 0 || n_ch == 0 {
        return Err(Error::TooShort("empty radio recording".into()));
    }
    let mut acc = vec![0.0; n];
    match kind {
        AlignSignal::MeanMagnitude => {
            for (a, f) in acc.iter_mut().zip(&rec.frames) {
                *a = f.h.iter().map(|h| h.norm()).sum::<f64>() / n_ch as f64;
            }
        }
        AlignSignal::ReflectionPhase => {
            for k in 0..n_ch {
                let series = rec.channel(k);
                let c = circle_centre(&series).ok_or_else(|| {
                    Error::Degenerate(format!("subcarrier {k} shows no motion"))
                })?;
                let ph = unwrap_phase(series.iter().map(|h| h - c));
                for (a, p) in acc.iter_mut().zip(ph) {
                    *a += p / n_ch as f64;
                }
            }
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub n_ch: usize,
    /// Overrides the uniform-stride selection when set.
    pub channels: Option<Vec<usize>>,
    pub win_s: f64,
    pub seg_len: usize,
    pub max_lag_s: f64,
    pub detrend_levels: usize,
    pub lowpass_cutoff: f64,
    pub lowpass_order: usize,
    pub align_signal: AlignSignal,
    /// Zero-phase high-pass applied to the radio alignment signal before the
    /// wavelet band is taken, `(cutoff Hz, order)`.
    pub align_highpass: Option<(f64, usize)>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            n_ch: 16,
            channels: None,
            win_s: 2.5,
            seg_len: 450,
            max_lag_s: 1.0,
            detrend_levels: 9,
            lowpass_cutoff: 4.0,
            lowpass_order: 12,
            align_signal: AlignSignal::ReflectionPhase,
            align_highpass: Some((0.7, 8)),
        }
    }
}

impl PreprocessConfig {
    pub fn with_channels(n_ch: usize) -> Self {
        Self {
            n_ch,
            ..Self::default()
        }
    }
}

/// Detrending followed by the zero-phase low-pass.
pub fn condition_ppg(ppg: &PpgRecording, cfg: &PreprocessConfig) -> Result<PpgRecording> {
    let d = detrend_wavelet(ppg, cfg.detrend_levels)?;
    Ok(PpgRecording {
        samples: butterworth_lowpass(&d.samples, ppg.rate, cfg.lowpass_cutoff, cfg.lowpass_order)?,
        rate: ppg.rate,
    })
}

/// Lag between radio and PPG, in radio samples.
pub fn estimate_lag(
    radio: &RadioRecording,
    conditioned_ppg: &PpgRecording,
    cfg: &PreprocessConfig,
) -> Result<AlignmentResult> {
    let mut reference = alignment_signal(radio, cfg.align_signal)?;
    if let Some((cutoff, order)) = cfg.align_highpass {
        reference = butterworth_highpass(&reference, radio.rate, cutoff, order)?;
    }
    let w_full = extract_d7_invariant(&reference, radio.rate)?;
    let n_y = (conditioned_ppg.duration() * radio.rate).floor() as usize;
    let n = w_full.len().min(n_y);
    let y = extract_d7_invariant(
        &rate_convert(&conditioned_ppg.samples, conditioned_ppg.rate, radio.rate, n),
        radio.rate,
    )?;
    let max_lag = (cfg.max_lag_s * radio.rate).round() as usize;
    if 2 * max_lag >= n {
        return Err(Error::TooShort(format!(
            "{n} overlapping samples cannot support a {max_lag}-sample lag search"
        )));
    }
    align(&w_full[..n], &y, max_lag)
}

/// Pairs plus the alignment that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<SegmentPair>,
    pub alignment: AlignmentResult,
    /// Windows discarded as degenerate.
    pub dropped: usize,
}

pub fn build_pairs(
    radio: &RadioRecording,
    ppg: &PpgRecording,
    n_ch: usize,
) -> Result<Vec<SegmentPair>> {
    Ok(build_pairs_with(radio, ppg, None, &PreprocessConfig::with_channels(n_ch))?.pairs)
}

fn segment_vitals(vitals: &[VitalsRecord], t0: f64, t1: f64) -> Option<[f64; 3]> {
    let inside: Vec<&VitalsRecord> = vitals
        .iter()
        .filter(|v| v.timestamp + 0.5 >= t0 && v.timestamp + 0.5 < t1)
        .collect();
    if inside.is_empty() {
        return None;
    }
    let n = inside.len() as f64;
    Some([
        inside.iter().map(|v| v.hr).sum::<f64>() / n,
        inside.iter().map(|v| v.spo2).sum::<f64>() / n,
        inside.iter().map(|v| v.rr).sum::<f64>() / n,
    ])
}

pub fn build_pairs_with(
    radio: &RadioRecording,
    ppg: &PpgRecording,
    vitals: Option<&[VitalsRecord]>,
    cfg: &PreprocessConfig,
) -> Result<PairSet> {
    let selected = match &cfg.channels {
        Some(idx) => select_channel_list(radio, idx)?,
        None => select_channels(radio, cfg.n_ch)?,
    };
    let conditioned = condition_ppg(ppg, cfg)?;
    let alignment = estimate_lag(&selected, &conditioned, cfg)?;

    let radio_skip = alignment.lag.max(0) as usize;
    let ppg_skip = ((-alignment.lag).max(0) as f64 * ppg.rate / radio.rate).round() as usize;
    let radio_dur = (selected.frames.len() - radio_skip) as f64 / radio.rate;
    let ppg_dur = (ppg.samples.len().saturating_sub(ppg_skip)) as f64 / ppg.rate;
    if (radio_dur - ppg_dur).abs() > 1.0 {
        return Err(Error::Alignment(format!(
            "after a lag of {} samples the streams last {radio_dur:.2} s and {ppg_dur:.2} s",
            alignment.lag
        )));
    }
    let common = radio_dur.min(ppg_dur);
    let win_r = window_len(radio.rate, cfg.win_s)?;
    let win_p = window_len(ppg.rate, cfg.win_s)?;
    let count = (common / cfg.win_s + 1e-9).floor() as usize;
    if count == 0 {
        return Err(Error::TooShort(format!(
            "{common:.2} s of overlap is shorter than one window"
        )));
    }

    let n_ch = selected.n_subcarriers();
    let frames = &selected.frames[radio_skip..];
    let mut pairs = Vec::with_capacity(count);
    let mut dropped = 0;
    'window: for j in 0..count {
        let block = &frames[j * win_r..(j + 1) * win_r];
        let mut radio_rows = Vec::with_capacity(2 * n_ch * cfg.seg_len);
        let mut mag_rows = Vec::with_capacity(n_ch * cfg.seg_len);
        for part in 0..2 {
            for k in 0..n_ch {
                let row: Vec<f64> = block
                    .iter()
                    .map(|f| if part == 0 { f.h[k].re } else { f.h[k].im })
                    .collect();
                match zscore(&resample_to(&row, cfg.seg_len)?) {
                    Ok(z) => radio_rows.extend(z),
                    Err(Error::Degenerate(_)) => {
                        dropped += 1;
                        continue 'window;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        for k in 0..n_ch {
            let row: Vec<f64> = block.iter().map(|f| f.h[k].norm()).collect();
            match zscore(&resample_to(&row, cfg.seg_len)?) {
                Ok(z) => mag_rows.extend(z),
                Err(Error::Degenerate(_)) => {
                    dropped += 1;
                    continue 'window;
                }
                Err(e) => return Err(e),
            }
        }
        let start = ppg_skip + j * win_p;
        let target = match zscore(&resample_to(
            &conditioned.samples[start..start + win_p],
            cfg.seg_len,
        )?) {
            Ok(z) => z,
            Err(Error::Degenerate(_)) => {
                dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let t0 = start as f64 / ppg.rate;
        pairs.push(SegmentPair {
            radio: radio_rows,
            n_rows: 2 * n_ch,
            magnitude: mag_rows,
            ppg: target,
            subject_id: radio.subject_id.clone(),
            segment_index: j,
            augmented: false,
            vitals: vitals.and_then(|v| segment_vitals(v, t0, t0 + cfg.win_s)),
        });
    }
    Ok(PairSet {
        pairs,
        alignment,
        dropped,
    })
}

/// Builds pairs for every subject, in subject order.
pub fn build_subject_pairs(
    subject: &SubjectRecording,
    cfg: &PreprocessConfig,
) -> Result<PairSet> {
    let mut radio = subject.radio.clone();
    radio.subject_id = subject.subject_id.clone();
    build_pairs_with(&radio, &subject.ppg, Some(&subject.vitals), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ofdm::{CfrFrame, ComplexVec};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn sine(f: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / rate).sin()).collect()
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let (ma, sa) = mean_std(a);
        let (mb, sb) = mean_std(b);
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 * sa * sb)
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn random_radio(seed: u64, frames: usize, n: usize) -> RadioRecording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RadioRecording {
            frames: (0..frames)
                .map(|i| {
                    let h = (0..n)
                        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect();
                    CfrFrame::new(ComplexVec::new(h).unwrap(), i, 250.0)
                })
                .collect(),
            rate: 250.0,
            subject_id: "R".into(),
        }
    }

    #[test]
    fn channel_strides() {
        assert_eq!(channel_indices(64, 64).unwrap(), (0..64).collect::<Vec<_>>());
        assert_eq!(channel_indices(16, 64).unwrap(), (0..16).map(|i| 4 * i).collect::<Vec<_>>());
        assert_eq!(
            channel_indices(10, 64).unwrap(),
            vec![0, 6, 12, 19, 25, 32, 38, 44, 51, 57]
        );
        assert!(channel_indices(0, 64).is_err());
        assert!(channel_indices(65, 64).is_err());
    }

    #[test]
    fn complex_split_is_lossless() {
        let rec = random_radio(1, 20, 5);
        let rows = expand_complex(&rec);
        assert_eq!(rows.len(), 10);
        let back = recombine_complex(&rows).unwrap();
        for (k, ch) in back.iter().enumerate() {
            assert_eq!(ch, &rec.channel(k));
        }
        let mut pure = rec.clone();
        for f in &mut pure.frames {
            let h: Vec<Complex64> = f.h.iter().map(|c| Complex64::new(c.re, 0.0)).collect();
            f.h = ComplexVec::new(h).unwrap();
        }
        assert!(expand_complex(&pure)[5..].iter().all(|r| r.iter().all(|v| *v == 0.0)));
        let mut j = random_radio(2, 1, 1);
        j.frames[0].h = ComplexVec::new(vec![Complex64::new(0.0, 1.0)]).unwrap();
        assert_eq!(expand_complex(&j), vec![vec![0.0], vec![1.0]]);
    }

    #[test]
    fn segmentation_counts() {
        assert_eq!(segment(&vec![0.0; 60000], 200.0, 2.5).unwrap().len(), 120);
        assert!(matches!(segment(&[0.0; 480], 200.0, 2.5), Err(Error::TooShort(_))));
        let x: Vec<f64> = (0..1020).map(|i| i as f64).collect();
        let w = segment(&x, 200.0, 2.5).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|s| s.len() == 500));
        assert_eq!(w.concat(), x[..1000].to_vec());
    }

    #[test]
    fn zscore_cases() {
        let z = zscore(&[1.0, 2.0, 3.0]).unwrap();
        let e = 1.224744871391589;
        for (a, b) in z.iter().zip([-e, 0.0, e]) {
            assert!((a - b).abs() < 1e-12);
        }
        let again = zscore(&z).unwrap();
        for (a, b) in again.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(zscore(&[5.0, 5.0, 5.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn resample_cases() {
        let x: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        assert_eq!(resample_to(&x, 37).unwrap(), x);
        let ramp: Vec<f64> = (0..625).map(|i| 3.0 + 0.5 * i as f64).collect();
        let r = resample_to(&ramp, 450).unwrap();
        assert_eq!(r[0], ramp[0]);
        assert_eq!(r[449], ramp[624]);
        for (i, v) in r.iter().enumerate() {
            let expect = 3.0 + 0.5 * 624.0 * i as f64 / 449.0;
            assert!((v - expect).abs() < 1e-9);
        }
        let s = sine(1.0, 250.0, 625);
        let rs = resample_to(&s, 450).unwrap();
        let truth: Vec<f64> = (0..450)
            .map(|i| (2.0 * PI * (i as f64 * 624.0 / 449.0) / 250.0).sin())
            .collect();
        assert!(corr(&rs, &truth) > 0.9999);
    }

    fn pair(idx: usize) -> SegmentPair {
        SegmentPair {
            radio: vec![0.5; 8],
            n_rows: 2,
            magnitude: vec![0.25; 4],
            ppg: vec![1.0; 4],
            subject_id: "A".into(),
            segment_index: idx,
            augmented: false,
            vitals: None,
        }
    }

    #[test]
    fn augmentation_doubles_and_perturbs() {
        let pairs: Vec<_> = (0..120).map(pair).collect();
        let out = augment(&pairs, 0.01, 3).unwrap();
        assert_eq!(out.len(), 240);
        assert!(out[..120].iter().all(|p| !p.augmented));
        assert!(out[120..].iter().all(|p| p.augmented));
        assert_eq!(out, augment(&pairs, 0.01, 3).unwrap());

        let quiet = augment(&pairs, 0.0, 3).unwrap();
        for (a, b) in quiet[120..].iter().zip(&pairs) {
            assert_eq!(a.radio, b.radio);
            assert_eq!(a.ppg, b.ppg);
        }

        let mut diffs = Vec::new();
        for (a, b) in out[120..].iter().zip(&pairs) {
            diffs.extend(a.radio.iter().zip(&b.radio).map(|(x, y)| x - y));
            diffs.extend(a.ppg.iter().zip(&b.ppg).map(|(x, y)| x - y));
        }
        let (_, sd) = mean_std(&diffs);
        assert!((sd * sd - 0.01).abs() < 0.001, "{}", sd * sd);
    }

    #[test]
    fn detrending_removes_ramps_and_keeps_pulses() {
        let n = 12000;
        let ramp: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let out = detrend_wavelet(&PpgRecording::new(ramp.clone(), 200.0).unwrap(), 9).unwrap();
        assert!(out.samples.iter().all(|v| v.abs() < 0.05));

        let s = sine(1.2, 200.0, n);
        let out = detrend_wavelet(&PpgRecording::new(s.clone(), 200.0).unwrap(), 9).unwrap();
        assert!(corr(&out.samples, &s) > 0.99);

        let mix: Vec<f64> = s.iter().zip(&ramp).map(|(a, b)| a + 3.0 * b).collect();
        let out = detrend_wavelet(&PpgRecording::new(mix, 200.0).unwrap(), 9).unwrap();
        assert!(corr(&out.samples, &s) > 0.98);
        assert!(detrend_wavelet(&PpgRecording::new(vec![0.0; 300], 200.0).unwrap(), 9).is_err());
    }

    #[test]
    fn d7_band_selectivity() {
        let n = 7500;
        let x = sine(1.4, 250.0, n);
        let y = extract_d7(&x, 250.0).unwrap();
        assert!(energy(&y) >= 0.6 * energy(&x), "{}", energy(&y) / energy(&x));
        let x = sine(10.0, 250.0, n);
        let y = extract_d7(&x, 250.0).unwrap();
        assert!(energy(&y) <= 0.05 * energy(&x), "{}", energy(&y) / energy(&x));
        assert!(extract_d7(&[0.0; 1000], 250.0).unwrap().iter().all(|v| *v == 0.0));
        assert!(extract_d7(&[0.0; 100], 250.0).is_err());
    }

    #[test]
    fn circle_fit_recovers_centre() {
        let c = Complex64::new(0.3, -1.2);
        let pts: Vec<Complex64> = (0..50)
            .map(|i| c + Complex64::from_polar(0.8, 0.4 + 0.03 * i as f64))
            .collect();
        assert!((circle_centre(&pts).unwrap() - c).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn zscore_is_affine_invariant(seed in 0u64..1000, a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (zx, zy) = (zscore(&x).unwrap(), zscore(&y).unwrap());
            for (p, q) in zx.iter().zip(&zy) {
                prop_assert!((p - q).abs() < 1e-10);
            }
        }

        #[test]
        fn segments_partition_the_stream(len in 500usize..3000) {
            let x: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let w = segment(&x, 200.0, 2.5).unwrap();
            prop_assert_eq!(w.concat(), x[..(len / 500) * 500].to_vec());
        }
    }
}
