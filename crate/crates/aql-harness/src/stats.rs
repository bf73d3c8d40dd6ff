//! Aggregation statistics: IQM, seeded percentile bootstrap, steps-to-band.

use aql_core::seeding::derive_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("bootstrap needs at least 1000 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    BadLevel(f64),
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    check_finite(values)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample mean and its standard error (n−1 denominator; SE is 0 for n = 1).
pub fn mean_and_se(values: &[f64]) -> Result<(f64, f64), StatsError> {
    let m = mean(values)?;
    let n = values.len();
    if n == 1 {
        return Ok((m, 0.0));
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((m, (var / n as f64).sqrt()))
}

/// Mean of the middle 50% of the sorted values.
///
/// Each sorted value occupies the unit weight interval [i, i+1); the kept
/// window is [n/4, 3n/4], so a value straddling a quartile cut contributes
/// its overlapping fraction and exactly half the total weight remains.
pub fn iqm(values: &[f64]) -> Result<f64, StatsError> {
    check_finite(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let n = sorted.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    let mut weight = 0.0;
    let mut acc = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        weight += w;
        acc += w * x;
    }
    Ok(acc / weight)
}

/// Aggregate reported per cell and bootstrapped for its confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Iqm,
}

impl Statistic {
    pub fn apply(self, values: &[f64]) -> Result<f64, StatsError> {
        match self {
            Statistic::Mean => mean(values),
            Statistic::Iqm => iqm(values),
        }
    }
}

/// Value at the p-quantile of pre-sorted data, interpolating linearly
/// between order statistics.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Seeded percentile bootstrap interval for the chosen statistic.
///
/// Each resample draws n indices uniformly with replacement. The interval is
/// the (α/2, 1−α/2) percentile pair of the resampled statistics, widened if
/// needed so it always contains the point estimate.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: Statistic,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    check_finite(values)?;
    if n_resamples < 1000 {
        return Err(StatsError::TooFewResamples(n_resamples));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    let mut rng = derive_rng(seed, "bootstrap", 0);
    let mut resampled = vec![0.0; values.len()];
    let mut stats = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        for slot in resampled.iter_mut() {
            *slot = values[rng.gen_range(0..values.len())];
        }
        stats.push(statistic.apply(&resampled)?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let alpha = 1.0 - level;
    let point = statistic.apply(values)?;
    let lo = percentile(&stats, alpha / 2.0);
    let hi = percentile(&stats, 1.0 - alpha / 2.0);
    Ok((lo.min(point), hi.max(point)))
}

/// First logged step after which the trace stays within ±band of the target
/// for the remainder of the log; `None` if the trace ends outside the band.
///
/// Scanning from the end makes the definition sustained-entry: a trace that
/// re-exits the band is charged for its final entry, not the first.
pub fn steps_to_band(steps: &[u64], values: &[f64], target: f64, band: f64) -> Option<u64> {
    assert!(band > 0.0, "band must be positive");
    assert_eq!(steps.len(), values.len(), "trace columns must align");
    let mut k = values.len();
    while k > 0 && (values[k - 1] - target).abs() <= band {
        k -= 1;
    }
    if k == values.len() {
        return None;
    }
    Some(steps[k])
}
