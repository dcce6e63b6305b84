use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MitigationError;

/// A probability, checked to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(p: f64) -> Result<Self, MitigationError> {
        if (0.0..=1.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(MitigationError::ProbabilityOutOfRange(p))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = MitigationError;

    fn try_from(p: f64) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> Self {
        p.0
    }
}

/// `R_i(S_h)`: per hazard class, the probability of reaching each loss class.
///
/// Built-in values are illustrative configuration, not measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskTable {
    entries: BTreeMap<String, BTreeMap<String, Probability>>,
}

impl RiskTable {
    pub fn new(entries: BTreeMap<String, BTreeMap<String, Probability>>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeMap<String, Probability>> {
        &self.entries
    }

    /// Most likely loss for `hazard_class` (0 when it lists no losses).
    pub fn risk_of_loss(&self, hazard_class: &str) -> Result<f64, MitigationError> {
        let losses = self
            .entries
            .get(hazard_class)
            .ok_or_else(|| MitigationError::UnknownHazardClass(hazard_class.to_owned()))?;
        Ok(losses.values().map(|p| p.value()).fold(0.0, f64::max))
    }

    pub fn risk_of_loss_for(&self, hazard_class: &str, loss_class: &str) -> Result<f64, MitigationError> {
        self.entries
            .get(hazard_class)
            .and_then(|l| l.get(loss_class))
            .map(|p| p.value())
            .ok_or_else(|| MitigationError::UnknownHazardClass(format!("{hazard_class}/{loss_class}")))
    }

    pub fn from_json(text: &str) -> Result<Self, MitigationError> {
        Self::from_json_within(text, text)
    }

    pub(crate) fn from_json_within(whole: &str, part: &str) -> Result<Self, MitigationError> {
        serde_json::from_str(part).map_err(|e| MitigationError::Config(crate::json_error_within(whole, part, &e)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("risk table serializes")
    }
}

impl Default for RiskTable {
    fn default() -> Self {
        let row =
            |hazard: &str, loss: &str, p: f64| (hazard.to_owned(), BTreeMap::from([(loss.to_owned(), Probability(p))]));
        Self {
            entries: BTreeMap::from([
                row("firearm", "injury", 0.9),
                row("fight", "injury", 0.8),
                row("obstruction", "collision", 0.4),
                row("spill", "slip_and_fall", 0.3),
            ]),
        }
    }
}
