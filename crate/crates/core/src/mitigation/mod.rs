//! Mitigation: response mapping from classifications to actions, simulated
//! responders, risk of loss and the anomaly detection factor ε.

mod epsilon;
mod responders;
mod risk;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{AnomalyClass, ClassifierVerdict, Directive};

pub use epsilon::{EpsilonRule, EpsilonStep, EpsilonTracker};
pub use responders::{execute_action, ActionLogEntry, Delivery, Responders, SimulatedSinks, Sink, SinkError};
pub use risk::{Probability, RiskTable};
pub use rules::{default_rulebook, KeywordRule, Rulebook};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MitigationError {
    #[error("invalid rule `{keyword}`: {reason}")]
    InvalidRule { keyword: String, reason: String },
    #[error("rulebook must contain at least one rule")]
    EmptyRulebook,
    #[error("duplicate keyword `{0}` in rulebook")]
    DuplicateKeyword(String),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("unknown hazard class `{0}`")]
    UnknownHazardClass(String),
    #[error("sink unavailable: {0}")]
    SinkUnavailable(String),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationAction {
    Siren,
    Notify,
    Warn,
    Alert,
    Replan,
    Report,
    Avoid,
    Resume,
    SafeStop,
}

impl MitigationAction {
    pub const ALL: [Self; 9] = [
        Self::Siren,
        Self::Notify,
        Self::Warn,
        Self::Alert,
        Self::Replan,
        Self::Report,
        Self::Avoid,
        Self::Resume,
        Self::SafeStop,
    ];
}

impl fmt::Display for MitigationAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Siren => "siren",
            Self::Notify => "notify",
            Self::Warn => "warn",
            Self::Alert => "alert",
            Self::Replan => "replan",
            Self::Report => "report",
            Self::Avoid => "avoid",
            Self::Resume => "resume",
            Self::SafeStop => "safe_stop",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub severity: Severity,
    pub actions: Vec<MitigationAction>,
    pub matched_keyword: Option<String>,
}

/// Chooses mitigations for a classifier verdict.
///
/// - unparsed output: `(High, [SafeStop, Report])`
/// - clear: `(Low, [Resume])`
/// - hazardous/conflict: the best keyword rule matching the description,
///   falling back to `(Medium, [directive])` when no keyword matches.
pub fn select_actions(verdict: &ClassifierVerdict, rulebook: &Rulebook) -> ActionPlan {
    let parsed = match verdict {
        ClassifierVerdict::Unparsed { .. } => {
            return ActionPlan {
                severity: Severity::High,
                actions: vec![MitigationAction::SafeStop, MitigationAction::Report],
                matched_keyword: None,
            }
        }
        ClassifierVerdict::Parsed(p) => p,
    };
    if parsed.class() == AnomalyClass::Clear {
        return ActionPlan {
            severity: Severity::Low,
            actions: vec![MitigationAction::Resume],
            matched_keyword: None,
        };
    }
    match rulebook.best_match(parsed.description()) {
        Some(rule) => ActionPlan {
            severity: rule.severity(),
            actions: rule.actions().to_vec(),
            matched_keyword: Some(rule.keyword().to_owned()),
        },
        None => ActionPlan {
            severity: Severity::Medium,
            actions: vec![match parsed.directive() {
                Directive::Report => MitigationAction::Report,
                _ => MitigationAction::Avoid,
            }],
            matched_keyword: None,
        },
    }
}
