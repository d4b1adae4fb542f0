use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    /// Positive when `w` trails `y`.
    pub lag: i64,
    pub score: f64,
}

/// Inner product `sum_t y[t - tau] w[t]` with out-of-range samples as zero.
pub fn lagged_inner_product(w: &[f64], y: &[f64], tau: i64) -> f64 {
    let n = w.len().min(y.len()) as i64;
    let lo = tau.max(0);
    let hi = (n + tau).min(n);
    if lo >= hi {
        return 0.0;
    }
    (lo..hi)
        .map(|t| y[(t - tau) as usize] * w[t as usize])
        .sum()
}

/// Brute-force lag search over `[-max_lag, max_lag]`; ties go to the
/// smallest `|tau|`, then to the positive lag.
pub fn align(w: &[f64], y: &[f64], max_lag: usize) -> Result<AlignmentResult> {
    if w.len() != y.len() {
        return Err(Error::shape(
            "align",
            format!("lengths differ: {} vs {}", w.len(), y.len()),
        ));
    }
    if w.is_empty() || 2 * max_lag >= w.len() {
        return Err(Error::invalid(format!(
            "max_lag {max_lag} must be below half the length {}",
            w.len()
        )));
    }
    let mut best = AlignmentResult {
        lag: 0,
        score: lagged_inner_product(w, y, 0),
    };
    for m in 1..=max_lag as i64 {
        for tau in [m, -m] {
            let s = lagged_inner_product(w, y, tau);
            if s > best.score {
                best = AlignmentResult { lag: tau, score: s };
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_signals_have_zero_lag() {
        let w = noise(1, 500);
        assert_eq!(align(&w, &w, 100).unwrap().lag, 0);
    }

    #[test]
    fn recovers_constructed_delay() {
        let y = noise(2, 1000);
        let mut w = vec![0.0; 1000];
        w[37..].copy_from_slice(&y[..963]);
        assert_eq!(align(&w, &y, 100).unwrap().lag, 37);
        assert_eq!(align(&y, &w, 100).unwrap().lag, -37);
    }

    #[test]
    fn independent_noise_scores_low() {
        let (w, y) = (noise(3, 4096), noise(4, 4096));
        let r = align(&w, &y, 200).unwrap();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(r.score.abs() / (norm(&w) * norm(&y)) < 0.2);
    }

    #[test]
    fn ties_prefer_small_lags() {
        let w = vec![0.0; 64];
        assert_eq!(align(&w, &w, 10).unwrap().lag, 0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(align(&[1.0; 10], &[1.0; 9], 2).is_err());
        assert!(align(&[1.0; 10], &[1.0; 10], 5).is_err());
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_the_lag(seed in 0u64..500, scale in 0.01f64..100.0) {
            let w = noise(seed, 300);
            let y = noise(seed + 1000, 300);
            let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
            prop_assert_eq!(align(&w, &y, 50).unwrap().lag, align(&w, &ys, 50).unwrap().lag);
        }
    }
}
