use serde::Serialize;

use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 64;

/// Uniform bins over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins spanning the observed range of `values`. A zero-width range puts
    /// everything in the first bin.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("histogram values must be finite"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        let mut counts = vec![0u64; bins];
        let width = hi - lo;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(left edge, right edge)` of bin `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }

    /// CSV with columns `bin,lo,hi,count`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin", "lo", "hi", "count"]).map_err(csv_err)?;
        for (i, c) in self.counts.iter().enumerate() {
            let (a, b) = self.edges(i);
            w.write_record([i.to_string(), a.to_string(), b.to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        finish(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentError {
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mae_median: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub per_segment: Vec<SegmentError>,
    /// Per-segment MAE; counts sum to the number of segments.
    pub histogram: Histogram,
    /// Signed pointwise errors `pred - target` over every sample.
    pub pointwise_histogram: Histogram,
}

pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub(crate) fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn check_batch(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "reconstruction_metrics",
            format!("{} predictions for {} targets", pred.len(), target.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::invalid("no segments to score"));
    }
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        if p.len() != t.len() || p.is_empty() {
            return Err(Error::shape(
                "reconstruction_metrics",
                format!("segment {i}: prediction length {} vs target {}", p.len(), t.len()),
            ));
        }
    }
    Ok(())
}

/// Per-segment MAE and MSE summarized across segments. Spreads are
/// population standard deviations.
pub fn reconstruction_metrics(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<MetricsReport> {
    check_batch(pred, target)?;
    let mut per_segment = Vec::with_capacity(pred.len());
    let mut pointwise = Vec::with_capacity(pred.len() * pred[0].len());
    for (p, t) in pred.iter().zip(target) {
        let n = p.len() as f64;
        let (mut abs, mut sq) = (0.0, 0.0);
        for (a, b) in p.iter().zip(t) {
            let e = a - b;
            abs += e.abs();
            sq += e * e;
            pointwise.push(e);
        }
        per_segment.push(SegmentError { mae: abs / n, mse: sq / n });
    }
    let maes: Vec<f64> = per_segment.iter().map(|s| s.mae).collect();
    let mses: Vec<f64> = per_segment.iter().map(|s| s.mse).collect();
    let (mae_mean, mae_std) = mean_std(&maes);
    let (mse_mean, mse_std) = mean_std(&mses);
    Ok(MetricsReport {
        rmse: mse_mean.sqrt(),
        mae_mean,
        mae_std,
        mae_median: median(&maes),
        mse_mean,
        mse_std,
        histogram: Histogram::from_values(&maes, HISTOGRAM_BINS)?,
        pointwise_histogram: Histogram::from_values(&pointwise, HISTOGRAM_BINS)?,
        per_segment,
    })
}

fn relative_terms(truth: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    if truth.len() != other.len() {
        return Err(Error::shape(
            "relative_error",
            format!("{} true values vs {} others", truth.len(), other.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::invalid("relative error of an empty vector"));
    }
    truth
        .iter()
        .zip(other)
        .enumerate()
        .map(|(i, (&t, &o))| {
            if t == 0.0 {
                Err(Error::ZeroReference { index: i })
            } else {
                Ok(f(t, o) / t.abs())
            }
        })
        .collect()
}

/// Per-example relative absolute errors `|true - measured| / |true|`.
pub fn relative_errors(truth: &[f64], measured: &[f64]) -> Result<Vec<f64>> {
    relative_terms(truth, measured, |t, m| (t - m).abs())
}

/// Mean relative absolute error as a fraction.
pub fn mrae(truth: &[f64], measured: &[f64]) -> Result<f64> {
    let r = relative_errors(truth, measured)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Mean relative standard deviation as a fraction.
pub fn mrsd(truth: &[f64], stds: &[f64]) -> Result<f64> {
    if let Some(i) = stds.iter().position(|s| !(*s >= 0.0)) {
        return Err(Error::invalid(format!("standard deviation at index {i} is negative or NaN")));
    }
    let r = relative_terms(truth, stds, |_, s| s)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Relative L1 error of one waveform: `sum |pred - target| / sum |target|`.
///
/// Z-scored targets cross zero, so the pointwise ratio is replaced by a
/// ratio of norms over the segment.
pub fn waveform_relative_error(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(
            "waveform_relative_error",
            format!("prediction length {} vs target {}", pred.len(), target.len()),
        ));
    }
    let denom: f64 = target.iter().map(|v| v.abs()).sum();
    if denom == 0.0 {
        return Err(Error::ZeroReference { index: 0 });
    }
    Ok(pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / denom)
}

/// Mean of [`waveform_relative_error`] over a batch of segments.
pub fn waveform_mrae(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    check_batch(pred, target)?;
    let mut total = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        total += waveform_relative_error(p, t).map_err(|e| match e {
            Error::ZeroReference { .. } => Error::ZeroReference { index: i },
            e => e,
        })?;
    }
    Ok(total / pred.len() as f64)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv: {e}")))
}

pub const METRICS_HEADER: [&str; 8] = ["scheme", "rmse", "mae_mean", "mae_std", "mae_median", "mse_mean", "mse_std", "segments"];

/// One row per labelled report, columns as [`METRICS_HEADER`].
pub fn metrics_table_csv(rows: &[(String, MetricsReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for (label, r) in rows {
        w.write_record([
            label.clone(),
            r.rmse.to_string(),
            r.mae_mean.to_string(),
            r.mae_std.to_string(),
            r.mae_median.to_string(),
            r.mse_mean.to_string(),
            r.mse_std.to_string(),
            r.per_segment.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Mean and spread of per-example relative errors for one vital and split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeSummary {
    pub mrae: f64,
    pub std: f64,
}

impl RelativeSummary {
    pub fn from_predictions(truth: &[f64], measured: &[f64]) -> Result<Self> {
        let r = relative_errors(truth, measured)?;
        let (mrae, std) = mean_std(&r);
        Ok(Self { mrae, std })
    }
}

/// One row of the vitals table: an input signal under one split scheme,
/// with train and validation summaries for `[hr, spo2, rr]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VitalsRow {
    pub input: String,
    pub scheme: String,
    pub train: [RelativeSummary; 3],
    pub valid: [RelativeSummary; 3],
}

/// Columns: input, scheme, then `{vital}_{split}_mrae` and `_std` for SpO2,
/// HR and RR.
pub fn vitals_table_csv(rows: &[VitalsRow]) -> Result<String> {
    const ORDER: [(usize, &str); 3] = [(1, "spo2"), (0, "hr"), (2, "rr")];
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["input".to_string(), "scheme".to_string()];
    for (_, name) in ORDER {
        for split in ["train", "valid"] {
            header.push(format!("{name}_{split}_mrae"));
            header.push(format!("{name}_{split}_std"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.input.clone(), r.scheme.clone()];
        for (j, _) in ORDER {
            for s in [&r.train[j], &r.valid[j]] {
                rec.push(s.mrae.to_string());
                rec.push(s.std.to_string());
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, n: usize) -> Vec<Vec<f64>> {
        (0..b).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
    }

    #[test]
    fn identical_batches_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_batch(&mut rng, 5, 30);
        let r = reconstruction_metrics(&t, &t).unwrap();
        for v in [r.rmse, r.mae_mean, r.mae_std, r.mae_median, r.mse_mean, r.mse_std] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(r.histogram.total(), 5);
        assert_eq!(r.pointwise_histogram.total(), 150);
    }

    #[test]
    fn unit_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_batch(&mut rng, 4, 20);
        let p: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(|v| v + 1.0).collect()).collect();
        let r = reconstruction_metrics(&p, &t).unwrap();
        assert!((r.mae_mean - 1.0).abs() < 1e-12);
        assert!((r.mse_mean - 1.0).abs() < 1e-12);
        assert!((r.rmse - 1.0).abs() < 1e-12);
        assert!(r.mae_std.abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_batch(&mut rng, 7, 450);
        let p = random_batch(&mut rng, 7, 450);
        let r = reconstruction_metrics(&p, &t).unwrap();

        let mut maes = Vec::new();
        let mut mses = Vec::new();
        for s in 0..7 {
            let mut a = 0.0;
            let mut q = 0.0;
            for i in 0..450 {
                let d = p[s][i] - t[s][i];
                a += if d < 0.0 { -d } else { d };
                q += d * d;
            }
            maes.push(a / 450.0);
            mses.push(q / 450.0);
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &[f64]| {
            let m = avg(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let mut sorted = maes.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((r.mae_mean - avg(&maes)).abs() < 1e-10);
        assert!((r.mae_std - sd(&maes)).abs() < 1e-10);
        assert!((r.mae_median - sorted[3]).abs() < 1e-10);
        assert!((r.mse_mean - avg(&mses)).abs() < 1e-10);
        assert!((r.mse_std - sd(&mses)).abs() < 1e-10);
        assert!((r.rmse - avg(&mses).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = vec![vec![0.0; 3]];
        let b = vec![vec![0.0; 4]];
        assert!(matches!(reconstruction_metrics(&a, &b), Err(Error::Shape { .. })));
        assert!(matches!(reconstruction_metrics(&a, &[]), Err(Error::Shape { .. })));
    }

    #[test]
    fn mrae_examples() {
        assert_eq!(mrae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mrae(&[100.0], &[90.0]).unwrap() - 0.10).abs() < 1e-15);
        assert!(matches!(mrae(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroReference { index: 1 })));
    }

    #[test]
    fn mrsd_examples() {
        assert_eq!(mrsd(&[3.0, -4.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((mrsd(&[10.0, 10.0], &[1.0, 3.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(mrsd(&[0.0], &[1.0]), Err(Error::ZeroReference { index: 0 })));
        assert!(mrsd(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn relative_metrics_match_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..200);
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0) * if rng.random() { 1.0 } else { -1.0 }).collect();
            let m: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut acc_a = 0.0;
            let mut acc_s = 0.0;
            for i in 0..n {
                acc_a += (t[i] - m[i]).abs() / t[i].abs();
                acc_s += s[i] / t[i].abs();
            }
            assert!((mrae(&t, &m).unwrap() - acc_a / n as f64).abs() < 1e-12);
            assert!((mrsd(&t, &s).unwrap() - acc_s / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn waveform_error_is_norm_ratio() {
        let t = [1.0, -1.0, 2.0];
        let p = [1.5, -1.0, 1.0];
        assert!((waveform_relative_error(&p, &t).unwrap() - 1.5 / 4.0).abs() < 1e-15);
        assert!(waveform_relative_error(&p, &[0.0; 3]).is_err());
        assert_eq!(waveform_mrae(&[t.to_vec()], &[t.to_vec()]).unwrap(), 0.0);
    }

    #[test]
    fn histogram_edges_and_degenerate_range() {
        let h = Histogram::from_values(&[0.0, 1.0, 0.5, 0.999], 4).unwrap();
        assert_eq!(h.counts, vec![1, 0, 1, 2]);
        let flat = Histogram::from_values(&[2.0; 5], 64).unwrap();
        assert_eq!(flat.counts[0], 5);
        assert_eq!(flat.total(), 5);
        let csv = h.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("bin,lo,hi,count"));
    }

    #[test]
    fn tables_have_expected_shape() {
        let t = vec![vec![1.0, 2.0]];
        let r = reconstruction_metrics(&t, &t).unwrap();
        let csv = metrics_table_csv(&[("pooled".into(), r.clone()), ("ltso".into(), r)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER.join(","));
        assert!(lines[1].starts_with("pooled,0,0,0,0,0,0,1"));

        let s = RelativeSummary { mrae: 0.5, std: 0.1 };
        let row = VitalsRow {
            input: "raw_ppg".into(),
            scheme: "ltso".into(),
            train: [s; 3],
            valid: [s; 3],
        };
        let v = vitals_table_csv(&[row]).unwrap();
        let header: Vec<&str> = v.lines().next().unwrap().split(',').collect();
        assert_eq!(header.len(), 14);
        assert_eq!(header[2], "spo2_train_mrae");
        assert_eq!(header[6], "hr_train_mrae");
    }

    proptest! {
        #[test]
        fn report_identities(b in 1usize..10, n in 1usize..60, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_batch(&mut rng, b, n);
            let p = random_batch(&mut rng, b, n);
            let r = reconstruction_metrics(&p, &t).unwrap();
            prop_assert!((r.rmse * r.rmse - r.mse_mean).abs() < 1e-9);
            prop_assert_eq!(r.histogram.total(), b as u64);
            prop_assert_eq!(r.pointwise_histogram.total(), (b * n) as u64);
            prop_assert_eq!(r.histogram.counts.len(), HISTOGRAM_BINS);
        }

        #[test]
        fn mrae_scale_covariant(seed in any::<u64>(), alpha in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..40);
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
            let m: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let ts: Vec<f64> = t.iter().map(|v| v * alpha).collect();
            let ms: Vec<f64> = m.iter().map(|v| v * alpha).collect();
            let a = mrae(&t, &m).unwrap();
            prop_assert!((mrae(&ts, &ms).unwrap() - a).abs() < 1e-9 * a.max(1.0));
        }
    }
}
