//! Latency budgeting.
//!
//! Stage latencies are measurements, so the budget's decision variables are
//! per-stage timeouts. Each stage gets its observed minimum plus a share of the
//! remaining slack `t_max − Σ min`, split in proportion to λ. Timeouts are
//! held in integer nanoseconds so they sum to `t_max` exactly.
//!
//! The default λ is each stage's mean excess over its minimum. Under a model
//! where that excess is exponentially distributed, this split minimizes the
//! worst per-stage probability of overrunning its timeout
//! ([`overrun_score`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{Stage, StageLatencyTrace};

const NS_PER_S: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("minimum stage latencies sum to {min_sum_s} s, above t_max {t_max_s} s")]
    Infeasible { min_sum_s: f64, t_max_s: f64 },
    #[error("invalid profile for {stage:?}: {reason}")]
    InvalidProfile { stage: Stage, reason: String },
    #[error("no stage profiles given")]
    NoProfiles,
    #[error("stage {0:?} profiled more than once")]
    DuplicateStage(Stage),
    #[error("t_max must be positive and finite, got {0}")]
    BadTmax(f64),
    #[error("lambda for {0:?} must be non-negative and finite")]
    BadLambda(Stage),
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("compute power must be positive, got {0}")]
    InvalidCompute(f64),
}

pub(crate) fn to_ns(seconds: f64) -> u64 {
    (seconds * NS_PER_S).round() as u64
}

fn to_s(ns: u64) -> f64 {
    ns as f64 / NS_PER_S
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageProfile {
    pub stage: Stage,
    pub min_s: f64,
    pub mean_s: f64,
}

impl StageProfile {
    pub fn new(stage: Stage, min_s: f64, mean_s: f64) -> Result<Self, BudgetError> {
        let bad = |reason: &str| BudgetError::InvalidProfile {
            stage,
            reason: reason.to_owned(),
        };
        if !(min_s > 0.0 && min_s.is_finite()) {
            return Err(bad("min must be positive"));
        }
        if !(mean_s >= min_s && mean_s.is_finite()) {
            return Err(bad("mean must be at least min"));
        }
        Ok(Self { stage, min_s, mean_s })
    }

    /// Builds a profile from observed stage durations.
    pub fn from_samples(stage: Stage, samples: &[f64]) -> Result<Self, BudgetError> {
        if samples.is_empty() {
            return Err(BudgetError::InvalidProfile {
                stage,
                reason: "no samples".into(),
            });
        }
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Self::new(stage, min, mean.max(min))
    }

    /// Mean excess over the minimum.
    pub fn excess_s(&self) -> f64 {
        self.mean_s - self.min_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    timeouts_ns: BTreeMap<Stage, u64>,
    t_max_ns: u64,
    lambda: BTreeMap<Stage, f64>,
}

impl BudgetAllocation {
    pub fn timeout_s(&self, stage: Stage) -> Option<f64> {
        self.timeouts_ns.get(&stage).copied().map(to_s)
    }

    pub fn timeout_ns(&self, stage: Stage) -> Option<u64> {
        self.timeouts_ns.get(&stage).copied()
    }

    pub fn timeouts_s(&self) -> BTreeMap<Stage, f64> {
        self.timeouts_ns.iter().map(|(&s, &ns)| (s, to_s(ns))).collect()
    }

    pub fn total_ns(&self) -> u64 {
        self.timeouts_ns.values().sum()
    }

    pub fn t_max_ns(&self) -> u64 {
        self.t_max_ns
    }

    pub fn t_max_s(&self) -> f64 {
        to_s(self.t_max_ns)
    }

    pub fn lambda(&self) -> &BTreeMap<Stage, f64> {
        &self.lambda
    }
}

fn check_profiles(profiles: &[StageProfile], t_max_s: f64) -> Result<(), BudgetError> {
    if profiles.is_empty() {
        return Err(BudgetError::NoProfiles);
    }
    if !(t_max_s > 0.0 && t_max_s.is_finite()) {
        return Err(BudgetError::BadTmax(t_max_s));
    }
    let mut seen = Vec::new();
    for p in profiles {
        if seen.contains(&p.stage) {
            return Err(BudgetError::DuplicateStage(p.stage));
        }
        seen.push(p.stage);
        StageProfile::new(p.stage, p.min_s, p.mean_s)?;
    }
    Ok(())
}

/// Allocates with the default λ (mean excess per stage).
pub fn allocate(profiles: &[StageProfile], t_max_s: f64) -> Result<BudgetAllocation, BudgetError> {
    let lambda = profiles.iter().map(|p| (p.stage, p.excess_s())).collect();
    allocate_with_lambda(profiles, t_max_s, &lambda)
}

/// Splits the slack in proportion to `lambda` (stages missing from it get 0).
/// If every λ is zero the slack is shared equally.
pub fn allocate_with_lambda(
    profiles: &[StageProfile],
    t_max_s: f64,
    lambda: &BTreeMap<Stage, f64>,
) -> Result<BudgetAllocation, BudgetError> {
    check_profiles(profiles, t_max_s)?;
    let weights: Vec<f64> = profiles
        .iter()
        .map(|p| {
            let w = lambda.get(&p.stage).copied().unwrap_or(0.0);
            if w >= 0.0 && w.is_finite() {
                Ok(w)
            } else {
                Err(BudgetError::BadLambda(p.stage))
            }
        })
        .collect::<Result<_, _>>()?;

    let t_max_ns = to_ns(t_max_s);
    let mins_ns: Vec<u64> = profiles.iter().map(|p| to_ns(p.min_s)).collect();
    let min_sum_ns: u64 = mins_ns.iter().sum();
    if min_sum_ns > t_max_ns {
        return Err(BudgetError::Infeasible {
            min_sum_s: profiles.iter().map(|p| p.min_s).sum(),
            t_max_s,
        });
    }
    let slack_ns = t_max_ns - min_sum_ns;

    let weight_sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if weight_sum > 0.0 {
        weights.iter().map(|w| w / weight_sum).collect()
    } else {
        vec![1.0 / profiles.len() as f64; profiles.len()]
    };

    // Largest-remainder rounding so the integer shares sum to the slack.
    let ideal: Vec<f64> = shares.iter().map(|s| s * slack_ns as f64).collect();
    let mut extra: Vec<u64> = ideal.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = extra.iter().sum();
    let mut leftover = slack_ns.saturating_sub(assigned);
    if assigned > slack_ns {
        // float floor overshoot; trim from the largest share
        let over = assigned - slack_ns;
        let i = (0..extra.len()).max_by_key(|&i| extra[i]).expect("non-empty");
        extra[i] -= over;
    }
    let mut order: Vec<usize> = (0..ideal.len()).filter(|&i| shares[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut cursor = order.iter().cycle();
    while leftover > 0 {
        let &i = cursor.next().expect("some stage has a positive share");
        extra[i] += 1;
        leftover -= 1;
    }

    let timeouts_ns = profiles
        .iter()
        .zip(mins_ns.iter().zip(&extra))
        .map(|(p, (m, e))| (p.stage, m + e))
        .collect();
    let lambda = profiles.iter().zip(&weights).map(|(p, &w)| (p.stage, w)).collect();
    Ok(BudgetAllocation {
        timeouts_ns,
        t_max_ns,
        lambda,
    })
}

/// Probability that a stage exceeds `timeout_s`, modelling its excess over
/// `min_s` as exponential with mean `mean_s − min_s`.
pub fn stage_overrun_probability(profile: &StageProfile, timeout_s: f64) -> f64 {
    let slack = timeout_s - profile.min_s;
    let excess = profile.excess_s();
    if slack < 0.0 {
        1.0
    } else if excess <= 0.0 {
        0.0
    } else {
        (-slack / excess).exp()
    }
}

/// Worst per-stage overrun probability under the given timeouts.
pub fn overrun_score(profiles: &[StageProfile], timeouts_s: &BTreeMap<Stage, f64>) -> f64 {
    profiles
        .iter()
        .map(|p| match timeouts_s.get(&p.stage) {
            Some(&t) => stage_overrun_probability(p, t),
            None => 1.0,
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeFit {
    /// Constant in `T = k / C`.
    pub k: f64,
    pub residual_norm: f64,
}

impl ComputeFit {
    pub fn predict(&self, compute: f64) -> f64 {
        self.k / compute
    }
}

/// Least-squares fit of `T = k / C`: `k = Σ(T/C) / Σ(1/C²)`.
pub fn fit_compute_model(samples: &[(f64, f64)]) -> Result<ComputeFit, BudgetError> {
    if samples.len() < 2 {
        return Err(BudgetError::InsufficientSamples(samples.len()));
    }
    if let Some(&(c, _)) = samples.iter().find(|(c, _)| !(*c > 0.0 && c.is_finite())) {
        return Err(BudgetError::InvalidCompute(c));
    }
    let num: f64 = samples.iter().map(|(c, t)| t / c).sum();
    let den: f64 = samples.iter().map(|(c, _)| 1.0 / (c * c)).sum();
    let k = num / den;
    let residual_norm = samples.iter().map(|(c, t)| (t - k / c).powi(2)).sum::<f64>().sqrt();
    Ok(ComputeFit { k, residual_norm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "stage")]
pub enum BudgetVerdict {
    WithinBudget,
    StageOverrun(Stage),
    TotalOverrun,
}

/// First stage (in pipeline order) over its timeout, else whether the total
/// exceeds `t_max`. Comparisons are made at nanosecond resolution.
pub fn enforce_budget(trace: &StageLatencyTrace, alloc: &BudgetAllocation) -> BudgetVerdict {
    let mut total_ns = 0u64;
    for stage in Stage::ALL {
        let spent_ns = trace.stage_ns(stage);
        total_ns += spent_ns;
        if alloc.timeout_ns(stage).is_some_and(|limit| spent_ns > limit) {
            return BudgetVerdict::StageOverrun(stage);
        }
    }
    if total_ns > alloc.t_max_ns {
        debug_assert!(
            Stage::ALL.iter().any(|s| alloc.timeout_ns(*s).is_none()) || alloc.total_ns() != alloc.t_max_ns,
            "stage timeouts sum to t_max, so the total cannot overrun"
        );
        return BudgetVerdict::TotalOverrun;
    }
    BudgetVerdict::WithinBudget
}
