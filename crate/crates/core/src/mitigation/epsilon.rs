use serde::{Deserialize, Serialize};

use crate::world::DetectionOutcome;

/// Update rule for the anomaly detection factor.
///
/// Each outcome is scored as
/// `w_c · correct + w_l · max(0, 1 − latency / t_max)` and ε moves toward the
/// score: `ε ← clamp(ε + lr · (score − ε), 0, 1)`. After `n` perfect
/// zero-latency outcomes from ε = 0 this gives `ε_n = 1 − (1 − lr)^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRule {
    pub learning_rate: f64,
    pub correctness_weight: f64,
    pub latency_weight: f64,
    pub latency_target_s: f64,
}

impl EpsilonRule {
    pub fn with_target(latency_target_s: f64) -> Self {
        Self {
            learning_rate: 0.1,
            correctness_weight: 0.7,
            latency_weight: 0.3,
            latency_target_s,
        }
    }

    /// Unknown correctness scores as incorrect.
    pub fn score(&self, correct: Option<bool>, latency_s: f64) -> f64 {
        let correct = if correct == Some(true) { 1.0 } else { 0.0 };
        let timeliness = (1.0 - latency_s / self.latency_target_s).max(0.0);
        self.correctness_weight * correct + self.latency_weight * timeliness
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStep {
    pub frame_id: u64,
    pub score: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonTracker {
    enabled: bool,
    epsilon: f64,
    rule: EpsilonRule,
    history: Vec<EpsilonStep>,
}

impl EpsilonTracker {
    pub fn new(enabled: bool, rule: EpsilonRule) -> Self {
        Self {
            enabled,
            epsilon: 0.0,
            rule,
            history: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rule(&self) -> &EpsilonRule {
        &self.rule
    }

    pub fn history(&self) -> &[EpsilonStep] {
        &self.history
    }

    /// Applies one outcome. A disabled tracker stays at 0.
    pub fn update(&mut self, outcome: &DetectionOutcome) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let score = self.rule.score(outcome.correct, outcome.latency_s);
        let prior = self.epsilon;
        let next = prior + self.rule.learning_rate * (score - prior);
        self.epsilon = if next.is_nan() { prior } else { next.clamp(0.0, 1.0) };
        self.history.push(EpsilonStep {
            frame_id: outcome.record.frame_id,
            score,
            delta: self.epsilon - prior,
            epsilon: self.epsilon,
        });
        self.epsilon
    }
}
