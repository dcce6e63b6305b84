//! Evaluation metrics: confusion counts, accuracy, preference score,
//! detection rate and the latency histogram.
//!
//! Percentages are kept as exact integer ratios ([`Percent`]) and only turned
//! into floats at the edge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    EmptyInput,
    #[error("inconsistent counts: u={u}, n={n}, t={t}")]
    DomainError { u: u64, n: u64, t: u64 },
    #[error("latency sample {0} is negative or not a number")]
    InvalidSample(f64),
}

/// `100 · numerator / denominator`, held exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percent {
    numerator: u64,
    denominator: u64,
}

impl Percent {
    fn new(numerator: u64, denominator: u64) -> Self {
        debug_assert!(denominator > 0);
        Self { numerator, denominator }
    }

    pub fn numerator(&self) -> u64 {
        self.numerator
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn value(&self) -> f64 {
        (100 * self.numerator as u128) as f64 / self.denominator as f64
    }

    /// Value rounded to two decimals, for reports.
    pub fn rounded(&self) -> f64 {
        (self.value() * 100.0).round() / 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Tallies `(truth, predicted)` pairs.
pub fn confusion(pairs: &[(bool, bool)]) -> Result<ConfusionCounts, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut counts = ConfusionCounts::default();
    for &(truth, predicted) in pairs {
        counts.record(truth, predicted);
    }
    Ok(counts)
}

/// `(TP + TN) / total`.
pub fn accuracy(c: &ConfusionCounts) -> Result<Percent, MetricsError> {
    match c.total() {
        0 => Err(MetricsError::EmptyInput),
        total => Ok(Percent::new(c.tp + c.tn, total)),
    }
}

fn half_weighted(u: u64, n: u64, t: u64) -> Result<Percent, MetricsError> {
    let consistent = t > 0 && u.checked_add(n).is_some_and(|sum| sum <= t);
    let doubled = u.checked_mul(2).and_then(|x| x.checked_add(n)).zip(t.checked_mul(2));
    match doubled {
        Some((num, den)) if consistent => Ok(Percent::new(num, den)),
        _ => Err(MetricsError::DomainError { u, n, t }),
    }
}

/// Survey tallies: `u` respondents preferring, `n` neutral, `t` total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyCounts {
    pub u: u64,
    pub n: u64,
    pub t: u64,
}

/// `(U + 0.5·N) / T`, with `U` preferring, `N` neutral, `T` total.
pub fn preference_score(u: u64, n: u64, t: u64) -> Result<Percent, MetricsError> {
    half_weighted(u, n, t)
}

/// Same form as [`preference_score`], with `U` the correct predictions and
/// `N` the neutral ones.
pub fn detection_rate(u: u64, n: u64, t: u64) -> Result<Percent, MetricsError> {
    half_weighted(u, n, t)
}

/// Upper bin edges in seconds; the last bin is open-ended.
pub const LATENCY_BIN_EDGES_S: [f64; 4] = [8.0, 14.0, 20.0, 26.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBin {
    pub lo_s: f64,
    /// `None` for the overflow bin.
    pub hi_s: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub bins: Vec<LatencyBin>,
    pub samples: usize,
    pub min_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
}

impl LatencyHistogram {
    pub fn counts(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.count).collect()
    }

    /// Fraction (0..=1) of samples in bins lying wholly below `limit_s`.
    pub fn share_below(&self, limit_s: f64) -> f64 {
        let below: usize = self
            .bins
            .iter()
            .filter(|b| b.hi_s.is_some_and(|hi| hi <= limit_s))
            .map(|b| b.count)
            .sum();
        below as f64 / self.samples as f64
    }
}

/// Bins `[0,8) [8,14) [14,20) [20,26) [26,∞)`.
pub fn latency_histogram(samples_s: &[f64]) -> Result<LatencyHistogram, MetricsError> {
    if samples_s.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(&bad) = samples_s.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(MetricsError::InvalidSample(bad));
    }
    let mut bins: Vec<LatencyBin> = std::iter::once(0.0)
        .chain(LATENCY_BIN_EDGES_S)
        .zip(LATENCY_BIN_EDGES_S.map(Some).into_iter().chain([None]))
        .map(|(lo_s, hi_s)| LatencyBin { lo_s, hi_s, count: 0 })
        .collect();
    for &s in samples_s {
        let idx = LATENCY_BIN_EDGES_S.partition_point(|&edge| edge <= s);
        bins[idx].count += 1;
    }

    // Neumaier summation keeps the mean of repeated values exact.
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &s in samples_s {
        let t = sum + s;
        carry += if sum.abs() >= s.abs() {
            (sum - t) + s
        } else {
            (s - t) + sum
        };
        sum = t;
    }
    let mean_s = (sum + carry) / samples_s.len() as f64;
    let min_s = samples_s.iter().copied().fold(f64::INFINITY, f64::min);
    let max_s = samples_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LatencyHistogram {
        bins,
        samples: samples_s.len(),
        min_s,
        max_s,
        mean_s: mean_s.clamp(min_s, max_s),
    })
}
