//! Localization metrics: standardized match counts (SNR), robustness,
//! accuracy within `d` slices, cumulative index distance, and the
//! moving-average smoother.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard deviations below this count as zero.
pub const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("series is empty")]
    EmptySeries,
    #[error("clean self-SNR is zero")]
    ZeroBaseline,
    #[error("no localization outcomes")]
    EmptyOutcomes,
    #[error("moving-average window must be odd and at least 1, got {0}")]
    EvenWindow(usize),
}

/// Match counts of one query against every slice of a reference stack and
/// their standardization `(count - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSeries {
    pub reference_subject: String,
    pub query_index: i64,
    pub counts: Vec<u64>,
    pub mu: f64,
    /// Population standard deviation of `counts`.
    pub sigma: f64,
    pub snr: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Set when `sigma` is zero; `snr` is then all zero.
    pub degenerate: bool,
}

impl SnrSeries {
    /// Replaces `smoothed` by the moving average of `snr`.
    pub fn smooth(&mut self, window: usize) -> Result<(), MetricsError> {
        self.smoothed = moving_average(&self.snr, window)?;
        Ok(())
    }
}

/// Standardizes `counts` with their mean and population standard deviation.
/// `smoothed` starts equal to `snr`.
pub fn snr_series(counts: &[u64]) -> Result<SnrSeries, MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let n = counts.len() as f64;
    let mu = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let sigma = (counts.iter().map(|&c| (c as f64 - mu).powi(2)).sum::<f64>() / n).sqrt();
    let degenerate = sigma < DEGENERATE_SIGMA;
    let snr: Vec<f64> =
        if degenerate { vec![0.0; counts.len()] } else { counts.iter().map(|&c| (c as f64 - mu) / sigma).collect() };
    Ok(SnrSeries {
        reference_subject: String::new(),
        query_index: 0,
        counts: counts.to_vec(),
        mu,
        sigma,
        smoothed: snr.clone(),
        snr,
        degenerate,
    })
}

/// `R_x = snr_degraded_self / snr_clean_self`. May exceed 1.
pub fn robustness(snr_degraded_self: f64, snr_clean_self: f64) -> Result<f64, MetricsError> {
    if snr_clean_self == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(snr_degraded_self / snr_clean_self)
}

/// Result of locating one query slice in a reference stack. Indices are
/// slice indices of the reference stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationOutcome {
    pub query_subject: String,
    pub query_index: i64,
    pub expected_index: i64,
    /// Argmax of the smoothed SNR series.
    pub best_index: i64,
    /// Argmax of the raw SNR series.
    pub raw_best_index: i64,
    /// Smoothed SNR at `best_index`.
    pub peak_snr: f64,
    /// Smoothed SNR at `expected_index`, when it lies in the searched range.
    pub expected_snr: Option<f64>,
    pub correct_within: BTreeMap<u32, bool>,
}

impl LocalizationOutcome {
    pub fn distance(&self) -> u64 {
        self.expected_index.abs_diff(self.best_index)
    }

    /// Fills `correct_within` for each `d`.
    pub fn mark(&mut self, d_values: &[u32]) {
        self.correct_within = d_values.iter().map(|&d| (d, self.distance() <= d as u64)).collect();
    }
}

/// Fraction of outcomes with `|expected - best| <= d`.
pub fn accuracy(outcomes: &[LocalizationOutcome], d: u32) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyOutcomes);
    }
    let hits = outcomes.iter().filter(|o| o.distance() <= d as u64).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// [`accuracy`] in percent.
pub fn accuracy_percent(outcomes: &[LocalizationOutcome], d: u32) -> Result<f64, MetricsError> {
    accuracy(outcomes, d).map(|a| a * 100.0)
}

/// Sum of `|expected - best|` over all outcomes.
pub fn cumulative_distance(outcomes: &[LocalizationOutcome]) -> u64 {
    outcomes.iter().map(LocalizationOutcome::distance).sum()
}

/// Centered moving average over an odd `window`. Element `i` averages
/// indices `max(0, i - h) ..= min(n - 1, i + h)` with `h = window / 2`.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>, MetricsError> {
    if window.is_multiple_of(2) {
        return Err(MetricsError::EvenWindow(window));
    }
    let h = window / 2;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}
