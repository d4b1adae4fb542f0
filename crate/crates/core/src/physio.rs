//! Synthetic physiology and the chest-modulated CFR stream.
//!
//! A [`PulseTrain`] is a continuous-time PPG model that can be sampled at any
//! rate and any time offset, which is how the reference sensor (200 Hz) and the
//! radio path (250 Hz, possibly lagged) observe the same heartbeat sequence.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{self, DatasetManifest, SimulationMeta, SubjectRecording};
use crate::error::{Error, Result};
use crate::ofdm::{sound_channel, CfrFrame, ComplexVec, OfdmConfig};
use crate::Complex64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub systolic_width_s: f64,
    pub dicrotic_delay_s: f64,
    pub dicrotic_amp_ratio: f64,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            systolic_width_s: 0.1,
            dicrotic_delay_s: 0.28,
            dicrotic_amp_ratio: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// Beats per minute.
    pub hr: f64,
    /// Breaths per minute.
    pub rr: f64,
    /// Percent.
    pub spo2: f64,
    pub pulse_shape: PulseShape,
    /// Fractional standard deviation of beat intervals.
    pub hr_jitter: f64,
    /// Depth of respiratory amplitude modulation of each pulse.
    pub resp_amp_mod: f64,
    /// Amplitude of the respiratory baseline wander.
    pub resp_baseline: f64,
    /// Amplitude of the sub-0.1 Hz drift.
    pub drift: f64,
}

impl SubjectProfile {
    pub fn new(subject_id: impl Into<String>, hr: f64, rr: f64, spo2: f64) -> Self {
        Self {
            subject_id: subject_id.into(),
            hr,
            rr,
            spo2,
            pulse_shape: PulseShape::default(),
            hr_jitter: 0.02,
            resp_amp_mod: 0.1,
            resp_baseline: 0.15,
            drift: 0.3,
        }
    }

    /// Draws a plausible resting adult profile.
    pub fn random(subject_id: impl Into<String>, rng: &mut impl Rng) -> Self {
        let mut p = Self::new(
            subject_id,
            rng.random_range(55.0..100.0),
            rng.random_range(12.0..22.0),
            rng.random_range(94.0..99.5),
        );
        p.pulse_shape = PulseShape {
            systolic_width_s: rng.random_range(0.08..0.12),
            dicrotic_delay_s: rng.random_range(0.22..0.32),
            dicrotic_amp_ratio: rng.random_range(0.3..0.6),
        };
        p.hr_jitter = rng.random_range(0.01..0.04);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.pulse_shape;
        let checks = [
            ((50.0..=110.0).contains(&self.hr), "hr outside [50, 110]"),
            ((10.0..=25.0).contains(&self.rr), "rr outside [10, 25]"),
            ((90.0..=100.0).contains(&self.spo2), "spo2 outside [90, 100]"),
            (
                s.dicrotic_amp_ratio >= 0.0 && s.dicrotic_amp_ratio < 1.0,
                "dicrotic_amp_ratio outside [0, 1)",
            ),
            (s.systolic_width_s > 0.0, "systolic width must be positive"),
            (s.dicrotic_delay_s >= 0.0, "dicrotic delay must be >= 0"),
            (
                (0.0..0.5).contains(&self.hr_jitter),
                "hr_jitter outside [0, 0.5)",
            ),
            (
                (0.0..1.0).contains(&self.resp_amp_mod),
                "resp_amp_mod outside [0, 1)",
            ),
            (
                self.resp_baseline >= 0.0 && self.drift >= 0.0,
                "modulation amplitudes must be >= 0",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(format!("{}: {msg}", self.subject_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpgRecording {
    pub samples: Vec<f64>,
    pub rate: f64,
}

impl PpgRecording {
    pub fn new(samples: Vec<f64>, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("PPG needs a positive rate and finite samples"));
        }
        Ok(Self { samples, rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VitalsRecord {
    pub hr: f64,
    pub spo2: f64,
    pub rr: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioRecording {
    pub frames: Vec<CfrFrame>,
    pub rate: f64,
    pub subject_id: String,
}

impl RadioRecording {
    pub fn n_subcarriers(&self) -> usize {
        self.frames.first().map_or(0, |f| f.h.len())
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.rate
    }

    /// Time series of one subcarrier.
    pub fn channel(&self, k: usize) -> Vec<Complex64> {
        self.frames.iter().map(|f| f.h[k]).collect()
    }
}

/// Continuous-time pulse model with a fixed, pre-drawn beat sequence.
#[derive(Debug, Clone)]
pub struct PulseTrain {
    profile: SubjectProfile,
    beats: Vec<f64>,
    resp_phase: f64,
    drift_phase: [f64; 2],
}

/// Time before zero and after the nominal end covered by the beat sequence,
/// so that lagged observers still see beats.
const MARGIN_S: f64 = 3.0;

impl PulseTrain {
    pub fn new(profile: &SubjectProfile, duration: f64, seed: u64) -> Result<Self> {
        profile.validate()?;
        if !(duration > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let period = 60.0 / profile.hr;
        let mut t = -MARGIN_S + rng.random_range(0.0..period);
        let mut beats = Vec::new();
        while t < duration + MARGIN_S {
            beats.push(t);
            let z: f64 = StandardNormal.sample(&mut rng);
            t += period * (1.0 + profile.hr_jitter * z).max(0.3);
        }
        Ok(Self {
            profile: profile.clone(),
            beats,
            resp_phase: rng.random_range(0.0..2.0 * PI),
            drift_phase: [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)],
        })
    }

    /// Onset times of the systolic peaks.
    pub fn beat_times(&self) -> &[f64] {
        &self.beats
    }

    pub fn profile(&self) -> &SubjectProfile {
        &self.profile
    }

    /// Unit-amplitude respiratory drive shared by the PPG modulation and
    /// the chest wall.
    pub fn respiration(&self, t: f64) -> f64 {
        (2.0 * PI * self.profile.rr / 60.0 * t + self.resp_phase).sin()
    }

    /// Samples `n` points at `rate`, the first at time `t0`.
    pub fn sample(&self, rate: f64, n: usize, t0: f64) -> Vec<f64> {
        let p = &self.profile;
        let s = p.pulse_shape;
        let sd_sys = s.systolic_width_s;
        let sd_dic = 1.3 * sd_sys;
        let reach = 6.0 * sd_dic + s.dicrotic_delay_s;
        let mut pulses = vec![0.0; n];
        for &b in &self.beats {
            let lo = ((b - reach - t0) * rate).floor().max(0.0) as usize;
            let hi = (((b + reach - t0) * rate).ceil().max(0.0) as usize).min(n);
            for (i, v) in pulses.iter_mut().enumerate().take(hi).skip(lo) {
                let t = t0 + i as f64 / rate;
                let u = (t - b) / sd_sys;
                let w = (t - b - s.dicrotic_delay_s) / sd_dic;
                *v += (-0.5 * u * u).exp() + s.dicrotic_amp_ratio * (-0.5 * w * w).exp();
            }
        }
        pulses
            .iter()
            .enumerate()
            .map(|(i, &pulse)| {
                let t = t0 + i as f64 / rate;
                let r = self.respiration(t);
                let drift = (2.0 * PI * 0.03 * t + self.drift_phase[0]).sin()
                    + 0.5 * (2.0 * PI * 0.071 * t + self.drift_phase[1]).sin();
                (1.0 + p.resp_amp_mod * r) * pulse + p.resp_baseline * r + p.drift * drift
            })
            .collect()
    }

    /// One record per whole second. HR is the reciprocal of the
    /// overlap-weighted mean beat interval within the second.
    pub fn vitals(&self, duration: f64, seed: u64) -> Vec<VitalsRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a1);
        let spo2_noise = Normal::new(0.0, 0.3).expect("valid std");
        let n = duration.floor() as usize;
        (0..n)
            .map(|sec| {
                let (a, b) = (sec as f64, sec as f64 + 1.0);
                let mut wsum = 0.0;
                let mut isum = 0.0;
                for pair in self.beats.windows(2) {
                    let overlap = pair[1].min(b) - pair[0].max(a);
                    if overlap > 0.0 {
                        wsum += overlap;
                        isum += overlap * (pair[1] - pair[0]);
                    }
                }
                let hr = if wsum > 0.0 { 60.0 * wsum / isum } else { self.profile.hr };
                let spo2 = (self.profile.spo2 + spo2_noise.sample(&mut rng)).min(100.0);
                VitalsRecord {
                    hr,
                    spo2,
                    rr: self.profile.rr,
                    timestamp: a,
                }
            })
            .collect()
    }
}

pub fn synth_ppg(
    profile: &SubjectProfile,
    duration: f64,
    rate: f64,
    seed: u64,
) -> Result<PpgRecording> {
    if !(rate > 0.0) {
        return Err(Error::invalid("rate must be positive"));
    }
    let train = PulseTrain::new(profile, duration, seed)?;
    let n = (duration * rate).round() as usize;
    PpgRecording::new(train.sample(rate, n, 0.0), rate)
}

/// `d(t) = amp_resp sin(2 pi rr/60 t) + amp_cardiac * ppg_n(t)` where `ppg_n`
/// is the PPG with its mean removed, scaled to unit peak magnitude.
pub fn chest_displacement(
    ppg: &PpgRecording,
    rr: f64,
    amp_cardiac: f64,
    amp_resp: f64,
) -> Result<Vec<f64>> {
    if !(amp_cardiac >= 0.0 && amp_resp >= 0.0) {
        return Err(Error::invalid("displacement amplitudes must be >= 0"));
    }
    let n = ppg.samples.len();
    let mean = ppg.samples.iter().sum::<f64>() / n.max(1) as f64;
    let peak = ppg
        .samples
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0, f64::max);
    let scale = if peak > 0.0 { amp_cardiac / peak } else { 0.0 };
    Ok(ppg
        .samples
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = i as f64 / ppg.rate;
            amp_resp * (2.0 * PI * rr / 60.0 * t).sin() + scale * (v - mean)
        })
        .collect())
}

/// Wavelength of subcarrier `k`.
pub fn subcarrier_wavelength(cfg: &OfdmConfig, k: usize) -> f64 {
    SPEED_OF_LIGHT / (cfg.carrier_freq + k as f64 * cfg.subcarrier_spacing())
}

/// Noise-free CFR for one displacement value.
pub fn reflection_cfr(
    d: f64,
    cfg: &OfdmConfig,
    clutter: &ComplexVec,
    reflect_amp: &ComplexVec,
) -> Vec<Complex64> {
    (0..cfg.n_subcarriers)
        .map(|k| {
            let phase = 4.0 * PI * d / subcarrier_wavelength(cfg, k);
            clutter[k] + reflect_amp[k] * Complex64::from_polar(1.0, phase)
        })
        .collect()
}

fn check_geometry(cfg: &OfdmConfig, clutter: &ComplexVec, reflect_amp: &ComplexVec) -> Result<()> {
    cfg.validate()?;
    if clutter.len() != cfg.n_subcarriers || reflect_amp.len() != cfg.n_subcarriers {
        return Err(Error::shape(
            "modulate_cfr",
            format!(
                "clutter {} and reflect_amp {} must both have {} entries",
                clutter.len(),
                reflect_amp.len(),
                cfg.n_subcarriers
            ),
        ));
    }
    Ok(())
}

/// Displacement-modulated CFR with complex Gaussian noise (variance
/// `noise_var`) added directly to each estimate.
pub fn modulate_cfr(
    d: &[f64],
    cfg: &OfdmConfig,
    clutter: &ComplexVec,
    reflect_amp: &ComplexVec,
    noise_var: f64,
    seed: u64,
) -> Result<RadioRecording> {
    check_geometry(cfg, clutter, reflect_amp)?;
    if !(noise_var >= 0.0) {
        return Err(Error::invalid("noise_var must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (noise_var / 2.0).sqrt()).expect("finite std");
    let rate = cfg.symbol_rate();
    let frames = d
        .iter()
        .enumerate()
        .map(|(i, &di)| {
            let mut h = reflection_cfr(di, cfg, clutter, reflect_amp);
            if noise_var > 0.0 {
                for v in &mut h {
                    *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
            Ok(CfrFrame::new(ComplexVec::new(h)?, i, rate))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RadioRecording {
        frames,
        rate,
        subject_id: String::new(),
    })
}

/// Same channel model, but every frame is obtained by sounding the channel
/// over the simulated OFDM link (`n_obs` training symbols, time-domain noise
/// variance `noise_var`) and re-estimating it by least squares.
pub fn modulate_cfr_link(
    d: &[f64],
    cfg: &OfdmConfig,
    clutter: &ComplexVec,
    reflect_amp: &ComplexVec,
    noise_var: f64,
    n_obs: usize,
    seed: u64,
) -> Result<RadioRecording> {
    check_geometry(cfg, clutter, reflect_amp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = cfg.symbol_rate();
    let frames = d
        .iter()
        .enumerate()
        .map(|(i, &di)| {
            let h = ComplexVec::new(reflection_cfr(di, cfg, clutter, reflect_amp))?;
            let est = sound_channel(&h, cfg, n_obs, noise_var, rng.random())?;
            Ok(CfrFrame::new(est, i, rate))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RadioRecording {
        frames,
        rate,
        subject_id: String::new(),
    })
}

/// Knobs of the synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub ofdm: OfdmConfig,
    pub ppg_rate: f64,
    pub amp_cardiac: f64,
    pub amp_resp: f64,
    /// Time-domain noise variance of the OFDM link.
    pub link_noise_var: f64,
    /// Training symbols per CFR estimate.
    pub n_obs: usize,
    /// Radio acquisition lag is drawn uniformly from `[-max_lag_s, max_lag_s]`.
    pub max_lag_s: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            ofdm: OfdmConfig::default(),
            ppg_rate: 200.0,
            amp_cardiac: 0.3e-3,
            amp_resp: 4e-3,
            link_noise_var: 4e-7,
            n_obs: 1,
            max_lag_s: 0.3,
        }
    }
}

/// Simulates one subject with an explicit radio lag: radio frame `t`
/// observes the chest at time `t - lag_s`.
pub fn simulate_subject_with_lag(
    profile: &SubjectProfile,
    duration: f64,
    lag_s: f64,
    cfg: &CohortConfig,
    seed: u64,
) -> Result<SubjectRecording> {
    if lag_s.abs() > MARGIN_S - 1.0 {
        return Err(Error::invalid(format!("lag {lag_s} s outside supported range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = PulseTrain::new(profile, duration, rng.random())?;
    let n_ppg = (duration * cfg.ppg_rate).round() as usize;
    let ppg = PpgRecording::new(train.sample(cfg.ppg_rate, n_ppg, 0.0), cfg.ppg_rate)?;

    let radio_rate = cfg.ofdm.symbol_rate();
    let n_radio = (duration * radio_rate).round() as usize;
    let seen = PpgRecording::new(train.sample(radio_rate, n_radio, -lag_s), radio_rate)?;
    let mut d = chest_displacement(&seen, profile.rr, cfg.amp_cardiac, 0.0)?;
    for (i, v) in d.iter_mut().enumerate() {
        let t = i as f64 / radio_rate;
        *v += cfg.amp_resp * train.respiration(t - lag_s);
    }

    let mut phasor = || Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    let clutter = ComplexVec::new((0..cfg.ofdm.n_subcarriers).map(|_| phasor()).collect())?;
    let reflect = ComplexVec::new((0..cfg.ofdm.n_subcarriers).map(|_| phasor()).collect())?;
    let mut radio = modulate_cfr_link(
        &d,
        &cfg.ofdm,
        &clutter,
        &reflect,
        cfg.link_noise_var,
        cfg.n_obs,
        rng.random(),
    )?;
    radio.subject_id = profile.subject_id.clone();
    let vitals = train.vitals(duration, rng.random());
    Ok(SubjectRecording {
        subject_id: profile.subject_id.clone(),
        radio,
        ppg,
        vitals,
        simulation: Some(SimulationMeta {
            lag_s,
            hr: profile.hr,
            rr: profile.rr,
            spo2: profile.spo2,
        }),
    })
}

/// Simulates subject `index` of a cohort; its seed is `seed + index`.
pub fn simulate_subject(
    index: usize,
    duration: f64,
    seed: u64,
    cfg: &CohortConfig,
) -> Result<SubjectRecording> {
    let subject_seed = seed.wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let profile = SubjectProfile::random(format!("S{:02}", index + 1), &mut rng);
    let lag = if cfg.max_lag_s > 0.0 {
        rng.random_range(-cfg.max_lag_s..=cfg.max_lag_s)
    } else {
        0.0
    };
    simulate_subject_with_lag(&profile, duration, lag, cfg, rng.random())
}

pub fn simulate_cohort(
    n_subjects: usize,
    duration: f64,
    seed: u64,
    cfg: &CohortConfig,
) -> Result<Vec<SubjectRecording>> {
    if n_subjects < 2 {
        return Err(Error::invalid("a cohort needs at least 2 subjects"));
    }
    (0..n_subjects)
        .map(|i| simulate_subject(i, duration, seed, cfg))
        .collect()
}

/// Simulates a cohort with default settings and writes it to `dir`.
pub fn generate_cohort(
    n_subjects: usize,
    duration: f64,
    seed: u64,
    dir: &Path,
) -> Result<DatasetManifest> {
    generate_cohort_with(n_subjects, duration, seed, &CohortConfig::default(), dir)
}

pub fn generate_cohort_with(
    n_subjects: usize,
    duration: f64,
    seed: u64,
    cfg: &CohortConfig,
    dir: &Path,
) -> Result<DatasetManifest> {
    let subjects = simulate_cohort(n_subjects, duration, seed, cfg)?;
    dataset::write_dataset(dir, &subjects)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_profile(hr: f64, ratio: f64) -> SubjectProfile {
        let mut p = SubjectProfile::new("T", hr, 15.0, 97.0);
        p.hr_jitter = 0.0;
        p.resp_amp_mod = 0.0;
        p.resp_baseline = 0.0;
        p.drift = 0.0;
        p.pulse_shape.dicrotic_amp_ratio = ratio;
        p
    }

    fn local_maxima(x: &[f64]) -> Vec<usize> {
        (1..x.len() - 1)
            .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
            .collect()
    }

    #[test]
    fn peak_spacing_matches_heart_rate() {
        let ppg = synth_ppg(&quiet_profile(60.0, 0.0), 10.0, 200.0, 3).unwrap();
        let peaks = local_maxima(&ppg.samples);
        assert!(peaks.len() >= 9);
        for w in peaks.windows(2) {
            assert!((w[1] - w[0]).abs_diff(200) <= 1);
        }
    }

    #[test]
    fn no_dicrotic_means_one_maximum_per_beat() {
        let p = quiet_profile(75.0, 0.0);
        let train = PulseTrain::new(&p, 20.0, 9).unwrap();
        let x = train.sample(200.0, 4000, 0.0);
        let inside = train
            .beat_times()
            .iter()
            .filter(|&&b| b > 0.01 && b < 19.99)
            .count();
        assert_eq!(local_maxima(&x).len(), inside);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = SubjectProfile::new("A", 70.0, 14.0, 97.0);
        let a = synth_ppg(&p, 5.0, 200.0, 11).unwrap();
        let b = synth_ppg(&p, 5.0, 200.0, 11).unwrap();
        let c = synth_ppg(&p, 5.0, 200.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn displacement_cases() {
        let p = SubjectProfile::new("A", 70.0, 14.0, 97.0);
        let ppg = synth_ppg(&p, 10.0, 250.0, 1).unwrap();
        assert!(chest_displacement(&ppg, 14.0, 0.0, 0.0)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let resp = chest_displacement(&ppg, 15.0, 0.0, 2e-3).unwrap();
        for (i, v) in resp.iter().enumerate() {
            let t = i as f64 / 250.0;
            assert!((v - 2e-3 * (2.0 * PI * 0.25 * t).sin()).abs() < 1e-15);
        }
        let d = chest_displacement(&ppg, 14.0, 0.3e-3, 4e-3).unwrap();
        assert!(d.iter().all(|v| v.abs() <= 4.3e-3 + 1e-15));
        assert!(chest_displacement(&ppg, 14.0, -1.0, 0.0).is_err());
    }

    fn unit_phasors(seed: u64, n: usize) -> ComplexVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexVec::new(
            (0..n)
                .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn static_scene_is_constant() {
        let cfg = OfdmConfig::default();
        let (c, r) = (unit_phasors(1, 64), unit_phasors(2, 64));
        let rec = modulate_cfr(&[0.0; 20], &cfg, &c, &r, 0.0, 0).unwrap();
        assert_eq!(rec.frames.len(), 20);
        for f in &rec.frames {
            for k in 0..64 {
                assert!((f.h[k] - (c[k] + r[k])).norm() < 1e-15);
            }
        }
        assert!((rec.frames[5].timestamp - 5.0 / 250.0).abs() < 1e-15);
    }

    #[test]
    fn half_wavelength_step_wraps_phase() {
        let cfg = OfdmConfig::default();
        let (c, r) = (unit_phasors(3, 64), unit_phasors(4, 64));
        let k = 17;
        let lam = subcarrier_wavelength(&cfg, k);
        let rec = modulate_cfr(&[0.0, lam / 2.0], &cfg, &c, &r, 0.0, 0).unwrap();
        assert!((rec.frames[0].h[k] - rec.frames[1].h[k]).norm() < 1e-9);
    }

    #[test]
    fn phase_inverts_to_displacement() {
        let cfg = OfdmConfig::default();
        let (c, r) = (unit_phasors(5, 64), unit_phasors(6, 64));
        let d: Vec<f64> = (0..500)
            .map(|i| 4e-3 * (2.0 * PI * 0.3 * i as f64 / 250.0).sin())
            .collect();
        let rec = modulate_cfr(&d, &cfg, &c, &r, 0.0, 0).unwrap();
        for k in [0, 31, 63] {
            let lam = subcarrier_wavelength(&cfg, k);
            let mut prev = 0.0;
            let mut acc = 0.0;
            for (i, f) in rec.frames.iter().enumerate() {
                let ph = ((f.h[k] - c[k]) / r[k]).arg();
                if i > 0 {
                    let mut step = ph - prev;
                    step -= 2.0 * PI * (step / (2.0 * PI)).round();
                    acc += step;
                } else {
                    acc = ph;
                }
                prev = ph;
                assert!((acc - 4.0 * PI * d[i] / lam).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn subcarrier_magnitude_carries_both_rhythms() {
        let mut p = quiet_profile(90.0, 0.3);
        p.rr = 18.0;
        let cfg = CohortConfig {
            link_noise_var: 0.0,
            max_lag_s: 0.0,
            ..CohortConfig::default()
        };
        let rec = simulate_subject_with_lag(&p, 64.0, 0.0, &cfg, 4).unwrap();
        let x: Vec<f64> = rec.radio.channel(10).iter().map(|h| h.norm()).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let power = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = 2.0 * PI * f * i as f64 / 250.0;
                re += (v - mean) * a.cos();
                im += (v - mean) * a.sin();
            }
            re * re + im * im
        };
        let resp = power(0.3);
        let card = power(1.5);
        let off = power(0.9).max(power(2.3)).max(power(4.1));
        assert!(resp > 10.0 * off, "resp {resp} off {off}");
        assert!(card > 10.0 * off, "card {card} off {off}");
    }

    #[test]
    fn vitals_follow_beat_intervals() {
        let mut p = SubjectProfile::new("V", 72.0, 16.0, 97.0);
        p.hr_jitter = 0.03;
        let train = PulseTrain::new(&p, 30.0, 5).unwrap();
        let v = train.vitals(30.0, 5);
        assert_eq!(v.len(), 30);
        for r in &v {
            assert!((r.hr - 72.0).abs() < 72.0 * 0.15);
            assert!(r.spo2 <= 100.0 && r.spo2 > 90.0);
            assert_eq!(r.rr, 16.0);
        }
    }

    #[test]
    fn cohort_shapes() {
        let cfg = CohortConfig::default();
        let subj = simulate_cohort(2, 4.0, 7, &cfg).unwrap();
        assert_eq!(subj[0].radio.frames.len(), 1000);
        assert_eq!(subj[0].ppg.samples.len(), 800);
        assert_eq!(subj[0].vitals.len(), 4);
        assert_ne!(subj[0].subject_id, subj[1].subject_id);
        assert!(simulate_cohort(1, 4.0, 7, &cfg).is_err());
    }
}
