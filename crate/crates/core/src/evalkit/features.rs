use serde::Serialize;

use super::metrics::median;
use crate::error::{Error, Result};

/// One SDPPG extremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fiducial {
    pub index: usize,
    pub amplitude: f64,
}

/// The a-e waves of one beat.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiducialSet {
    pub a: Fiducial,
    pub b: Fiducial,
    pub c: Fiducial,
    pub d: Fiducial,
    pub e: Fiducial,
    pub t_ab: f64,
    pub t_bc: f64,
    pub t_cd: f64,
    pub t_de: f64,
    pub agi: f64,
}

pub const FEATURE_NAMES: [&str; 5] = ["t_ab", "t_bc", "t_cd", "t_de", "agi"];

/// Aging index from signed wave amplitudes.
pub fn agi(a: f64, b: f64, c: f64, d: f64, e: f64) -> f64 {
    (b - c - d - e) / a
}

impl FiducialSet {
    /// Builds a set from five `(index, amplitude)` points in a-e order.
    pub fn from_points(points: [(usize, f64); 5], rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::invalid("rate must be positive"));
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid(format!(
                "fiducial indices must increase strictly, got {:?}",
                points.map(|p| p.0)
            )));
        }
        if points[0].1 == 0.0 {
            return Err(Error::ZeroReference { index: points[0].0 });
        }
        let f = points.map(|(index, amplitude)| Fiducial { index, amplitude });
        let dt = |i: usize| (f[i + 1].index - f[i].index) as f64 / rate;
        Ok(Self {
            t_ab: dt(0),
            t_bc: dt(1),
            t_cd: dt(2),
            t_de: dt(3),
            agi: agi(f[0].amplitude, f[1].amplitude, f[2].amplitude, f[3].amplitude, f[4].amplitude),
            a: f[0],
            b: f[1],
            c: f[2],
            d: f[3],
            e: f[4],
        })
    }

    /// Features in [`FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; 5] {
        [self.t_ab, self.t_bc, self.t_cd, self.t_de, self.agi]
    }
}

/// Beats found in one signal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdppgFeatures {
    pub beats: Vec<FiducialSet>,
    /// Why no beats were reported, when that happens.
    pub diagnostic: Option<String>,
}

/// Centered moving average over 5 samples, shrinking at the edges.
pub fn smooth5(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 3).min(n);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Central differences in the interior, one-sided at the ends.
pub fn gradient(x: &[f64], rate: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| match i {
            0 => (x[1] - x[0]) * rate,
            i if i == n - 1 => (x[n - 1] - x[n - 2]) * rate,
            i => (x[i + 1] - x[i - 1]) * rate / 2.0,
        })
        .collect()
}

/// Second derivative of the smoothed PPG.
pub fn sdppg(ppg: &[f64], rate: f64) -> Vec<f64> {
    gradient(&gradient(&smooth5(ppg), rate), rate)
}

fn is_max(s: &[f64], i: usize) -> bool {
    s[i] > s[i - 1] && s[i] >= s[i + 1]
}

fn is_min(s: &[f64], i: usize) -> bool {
    s[i] < s[i - 1] && s[i] <= s[i + 1]
}

/// Systolic peaks of the smoothed PPG: local maxima above the midpoint
/// between the median and the 98th percentile, at least `min_gap` apart.
fn systolic_peaks(x: &[f64], min_gap: usize) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = sorted[sorted.len() / 2];
    let hi = sorted[((sorted.len() - 1) as f64 * 0.98) as usize];
    let thresh = med + 0.5 * (hi - med);
    let mut cands: Vec<usize> = (1..x.len() - 1).filter(|&i| is_max(x, i) && x[i] > thresh).collect();
    // Tallest first; drop anything too close to an accepted peak.
    cands.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

fn argmin(x: &[f64], lo: usize, hi: usize) -> usize {
    (lo..hi).min_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap_or(lo)
}

/// Shortest beat interval accepted, in seconds (150 bpm).
const MIN_BEAT_S: f64 = 0.4;

/// Per-beat a-e waves of the SDPPG.
///
/// Beats are delimited by the PPG foot (minimum before each systolic peak).
/// `a` is the SDPPG maximum between foot and peak; `b`..`e` are the next
/// alternating minimum, maximum, minimum and maximum before the next foot.
/// Beats cut by the signal ends or missing a wave are skipped.
pub fn sdppg_features(ppg: &[f64], rate: f64) -> Result<SdppgFeatures> {
    if !(rate > 0.0) {
        return Err(Error::invalid("rate must be positive"));
    }
    if ppg.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PPG contains non-finite samples"));
    }
    let none = |why: String| SdppgFeatures {
        beats: Vec::new(),
        diagnostic: Some(why),
    };
    let min_gap = ((MIN_BEAT_S * rate).round() as usize).max(2);
    if ppg.len() < 2 * min_gap {
        return Ok(none(format!("{} samples is shorter than two beats", ppg.len())));
    }
    let smooth = smooth5(ppg);
    let s = gradient(&gradient(&smooth, rate), rate);
    let peaks = systolic_peaks(&smooth, min_gap);
    if peaks.len() < 2 {
        return Ok(none(format!("found {} systolic peaks, need at least 2", peaks.len())));
    }
    let gaps: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let period = median(&gaps);

    let feet: Vec<Option<usize>> = peaks
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let lo = if i == 0 { p.saturating_sub(period as usize) } else { peaks[i - 1] };
            let f = argmin(&smooth, lo, p);
            // A foot on the window edge means the beat start was cut off.
            (f > lo).then_some(f)
        })
        .collect();

    let mut beats = Vec::new();
    for (i, &p) in peaks.iter().enumerate() {
        let Some(foot) = feet[i] else { continue };
        let end = match feet.get(i + 1) {
            Some(Some(next)) => *next,
            Some(None) => continue,
            None => (p + period as usize).min(s.len() - 1),
        };
        let a = (foot..=p).max_by(|&x, &y| s[x].total_cmp(&s[y]).then(y.cmp(&x))).unwrap_or(foot);
        let mut points = vec![(a, s[a])];
        let mut want_min = true;
        for j in a + 1..end {
            if points.len() == 5 {
                break;
            }
            let hit = if want_min { is_min(&s, j) } else { is_max(&s, j) };
            if hit {
                points.push((j, s[j]));
                want_min = !want_min;
            }
        }
        if points.len() < 5 || points[0].1 <= 0.0 {
            continue;
        }
        let pts = [points[0], points[1], points[2], points[3], points[4]];
        beats.push(FiducialSet::from_points(pts, rate)?);
    }
    let diagnostic = beats
        .is_empty()
        .then(|| format!("{} beats found but none had a complete a-e sequence", peaks.len()));
    Ok(SdppgFeatures { beats, diagnostic })
}

/// Reference and twin features of one matched beat.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeatComparison {
    pub reference: [f64; 5],
    pub twin: [f64; 5],
    pub abs_diff: [f64; 5],
    /// `abs_diff / |reference|`; zero when both are zero, infinite when only
    /// the reference is.
    pub rel_diff: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureAgreement {
    pub reference_beats: usize,
    pub twin_beats: usize,
    pub matched: Vec<BeatComparison>,
}

impl FeatureAgreement {
    /// Median absolute difference of feature `k` (see [`FEATURE_NAMES`]).
    pub fn median_abs(&self, k: usize) -> Option<f64> {
        if self.matched.is_empty() || k >= 5 {
            return None;
        }
        let v: Vec<f64> = self.matched.iter().map(|m| m.abs_diff[k]).collect();
        Some(median(&v))
    }
}

/// Compares SDPPG features of the reference and twin signals beat by beat.
/// Each reference beat is matched to the twin beat whose `a` wave is
/// nearest, if that is within half a beat.
pub fn feature_agreement(reference: &[f64], twin: &[f64], rate: f64) -> Result<FeatureAgreement> {
    let r = sdppg_features(reference, rate)?;
    let t = sdppg_features(twin, rate)?;
    if r.beats.is_empty() || t.beats.is_empty() {
        return Err(Error::Pairing(format!(
            "no beats to compare: {}",
            r.diagnostic.or(t.diagnostic).unwrap_or_default()
        )));
    }
    if r.beats.len().abs_diff(t.beats.len()) > 1 {
        return Err(Error::Pairing(format!(
            "reference has {} beats, twin has {}",
            r.beats.len(),
            t.beats.len()
        )));
    }
    let a_idx: Vec<f64> = r.beats.iter().map(|b| b.a.index as f64).collect();
    let half_beat = if a_idx.len() > 1 {
        0.5 * median(&a_idx.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
    } else {
        0.5 * rate
    };
    let mut used = vec![false; t.beats.len()];
    let mut matched = Vec::new();
    for rb in &r.beats {
        let best = t
            .beats
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .min_by_key(|(_, tb)| tb.a.index.abs_diff(rb.a.index));
        let Some((j, tb)) = best else { break };
        if tb.a.index.abs_diff(rb.a.index) as f64 > half_beat {
            continue;
        }
        used[j] = true;
        let (rf, tf) = (rb.features(), tb.features());
        let abs_diff: [f64; 5] = std::array::from_fn(|k| (tf[k] - rf[k]).abs());
        let rel_diff = std::array::from_fn(|k| match (abs_diff[k], rf[k]) {
            (d, _) if d == 0.0 => 0.0,
            (_, r) if r == 0.0 => f64::INFINITY,
            (d, r) => d / r.abs(),
        });
        matched.push(BeatComparison {
            reference: rf,
            twin: tf,
            abs_diff,
            rel_diff,
        });
    }
    if matched.is_empty() {
        return Err(Error::Pairing("no reference beat has a twin beat within half a period".into()));
    }
    Ok(FeatureAgreement {
        reference_beats: r.beats.len(),
        twin_beats: t.beats.len(),
        matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RATE: f64 = 200.0;
    const MU1: f64 = 0.25;
    const S1: f64 = 0.06;
    const MU2: f64 = 0.45;
    const S2: f64 = 0.08;
    const AMP2: f64 = 0.5;

    fn gauss(t: f64, mu: f64, s: f64) -> f64 {
        (-0.5 * ((t - mu) / s).powi(2)).exp()
    }

    fn gauss_dd(t: f64, mu: f64, s: f64) -> f64 {
        let u = (t - mu) / s;
        (u * u - 1.0) / (s * s) * gauss(t, mu, s)
    }

    /// Double-Gaussian pulse repeated every second; phase is the time
    /// within the beat.
    fn pulse(t: f64) -> f64 {
        (-2..=2)
            .map(|k| {
                let p = t - t.floor() + k as f64;
                gauss(p, MU1, S1) + AMP2 * gauss(p, MU2, S2)
            })
            .sum()
    }

    fn pulse_dd(t: f64) -> f64 {
        (-2..=2)
            .map(|k| {
                let p = t - t.floor() + k as f64;
                gauss_dd(p, MU1, S1) + AMP2 * gauss_dd(p, MU2, S2)
            })
            .sum()
    }

    fn signal(seconds: f64) -> Vec<f64> {
        (0..(seconds * RATE) as usize).map(|i| pulse(i as f64 / RATE)).collect()
    }

    /// a-e from an exhaustive scan of the analytic SDPPG on a fine grid over
    /// one beat, as times within the beat.
    fn oracle_times() -> [f64; 5] {
        let fine = 20_000;
        let v: Vec<f64> = (0..fine).map(|i| pulse_dd(i as f64 / fine as f64)).collect();
        let mut maxima = Vec::new();
        let mut minima = Vec::new();
        for i in 1..fine - 1 {
            if v[i] > v[i - 1] && v[i] >= v[i + 1] {
                maxima.push(i);
            }
            if v[i] < v[i - 1] && v[i] <= v[i + 1] {
                minima.push(i);
            }
        }
        // a: largest maximum before the systolic peak.
        let a = *maxima
            .iter()
            .filter(|&&i| (i as f64 / fine as f64) < MU1)
            .max_by(|&&x, &&y| v[x].total_cmp(&v[y]))
            .unwrap();
        let mut seq = vec![a];
        let mut want_min = true;
        let mut cur = a;
        while seq.len() < 5 {
            let pool = if want_min { &minima } else { &maxima };
            cur = *pool.iter().find(|&&i| i > cur).unwrap();
            seq.push(cur);
            want_min = !want_min;
        }
        std::array::from_fn(|k| seq[k] as f64 / fine as f64)
    }

    #[test]
    fn agi_examples() {
        assert_eq!(agi(2.0, 1.0, 0.5, 0.25, 0.25), 0.0);
        assert_eq!(agi(1.0, 0.0, 0.0, 0.0, 0.0), 0.0);
        let f = FiducialSet::from_points([(0, 2.0), (1, 1.0), (2, 0.5), (3, 0.25), (4, 0.25)], 100.0).unwrap();
        assert_eq!(f.agi, 0.0);
        assert_eq!(f.t_ab, 0.01);
        assert!(FiducialSet::from_points([(0, 1.0), (0, 1.0), (2, 0.0), (3, 0.0), (4, 0.0)], 100.0).is_err());
    }

    #[test]
    fn smoothing_and_gradient_basics() {
        assert_eq!(smooth5(&[1.0; 7]), vec![1.0; 7]);
        let ramp: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        assert!(gradient(&ramp, 2.0).iter().all(|g| (g - 6.0).abs() < 1e-12));
        let quad: Vec<f64> = (0..20).map(|i| (i as f64).powi(2)).collect();
        let dd = sdppg(&quad, 1.0);
        assert!(dd[4..16].iter().all(|v| (v - 2.0).abs() < 1e-9), "{dd:?}");
    }

    #[test]
    fn double_gaussian_matches_extrema_oracle() {
        let oracle = oracle_times();
        assert!(oracle.windows(2).all(|w| w[0] < w[1]));
        assert!(oracle[4] - oracle[0] < 1.0);
        let out = sdppg_features(&signal(8.0), RATE).unwrap();
        assert!(out.diagnostic.is_none());
        assert!(out.beats.len() >= 6, "{} beats", out.beats.len());
        for b in &out.beats {
            let idx = [b.a.index, b.b.index, b.c.index, b.d.index, b.e.index];
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            let beat_start = (idx[0] as f64 / RATE).floor();
            for (k, &i) in idx.iter().enumerate() {
                let t = i as f64 / RATE - beat_start;
                assert!((t - oracle[k]).abs() <= 3.0 / RATE, "wave {k}: {t} vs {}", oracle[k]);
            }
            assert!(b.t_ab > 0.0 && b.t_bc > 0.0 && b.t_cd > 0.0 && b.t_de > 0.0);
        }
    }

    #[test]
    fn flat_signal_reports_diagnostic() {
        let out = sdppg_features(&vec![0.0; 1000], RATE).unwrap();
        assert!(out.beats.is_empty());
        assert!(out.diagnostic.is_some());
        let out = sdppg_features(&[1.0; 10], RATE).unwrap();
        assert!(out.diagnostic.is_some());
    }

    #[test]
    fn identical_signals_agree_exactly() {
        let x = signal(10.0);
        let fa = feature_agreement(&x, &x, RATE).unwrap();
        assert!(!fa.matched.is_empty());
        for m in &fa.matched {
            assert_eq!(m.abs_diff, [0.0; 5]);
            assert_eq!(m.rel_diff, [0.0; 5]);
        }
        assert_eq!(fa.median_abs(4), Some(0.0));
    }

    #[test]
    fn delay_leaves_intervals_unchanged() {
        let x = signal(10.0);
        let mut y = vec![x[0]; 3];
        y.extend_from_slice(&x[..x.len() - 3]);
        let fa = feature_agreement(&x, &y, RATE).unwrap();
        assert!(fa.matched.len() >= 7);
        for m in &fa.matched {
            for k in 0..4 {
                assert_eq!(m.abs_diff[k], 0.0);
            }
        }
    }

    #[test]
    fn beat_count_mismatch_is_pairing_error() {
        let x = signal(10.0);
        let y = signal(4.0);
        assert!(matches!(feature_agreement(&x, &y, RATE), Err(Error::Pairing(_))));
        assert!(matches!(feature_agreement(&x, &vec![0.0; 2000], RATE), Err(Error::Pairing(_))));
    }

    proptest! {
        #[test]
        fn fiducials_are_ordered(seed in any::<u64>(), hr in 50.0f64..110.0, noise in 0.0f64..0.02) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let scale = hr / 60.0;
            let x: Vec<f64> = (0..2000)
                .map(|i| pulse(i as f64 / RATE * scale) + noise * rng.random_range(-1.0..1.0))
                .collect();
            let out = sdppg_features(&x, RATE).unwrap();
            for b in &out.beats {
                let idx = [b.a.index, b.b.index, b.c.index, b.d.index, b.e.index];
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(b.t_ab > 0.0 && b.t_de > 0.0);
            }
        }
    }
}
