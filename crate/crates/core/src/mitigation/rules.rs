use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{MitigationAction, MitigationError, Severity};
use crate::perception::AnomalyClass;

/// Keyword of the response mapping layer and the mitigations it triggers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRule")]
pub struct KeywordRule {
    keyword: String,
    class: AnomalyClass,
    severity: Severity,
    actions: Vec<MitigationAction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    keyword: String,
    class: AnomalyClass,
    severity: Severity,
    actions: Vec<MitigationAction>,
}

impl TryFrom<RawRule> for KeywordRule {
    type Error = MitigationError;

    fn try_from(raw: RawRule) -> Result<Self, Self::Error> {
        Self::new(raw.keyword, raw.class, raw.severity, raw.actions)
    }
}

impl KeywordRule {
    pub fn new(
        keyword: impl Into<String>,
        class: AnomalyClass,
        severity: Severity,
        actions: Vec<MitigationAction>,
    ) -> Result<Self, MitigationError> {
        let keyword = keyword.into().trim().to_lowercase();
        let bad = |reason: &str| MitigationError::InvalidRule {
            keyword: keyword.clone(),
            reason: reason.to_owned(),
        };
        if keyword.is_empty() {
            return Err(bad("keyword is empty"));
        }
        if class == AnomalyClass::Clear {
            return Err(bad("rules must classify as hazardous or conflict"));
        }
        if severity == Severity::High && class != AnomalyClass::Hazardous {
            return Err(bad("high severity requires the hazardous class"));
        }
        if actions.is_empty() {
            return Err(bad("actions must not be empty"));
        }
        Ok(Self {
            keyword,
            class,
            severity,
            actions,
        })
    }

    pub fn keyword(&self) -> &str {
        &self.keyword
    }

    pub fn class(&self) -> AnomalyClass {
        self.class
    }

    pub fn severity(&self) -> Severity {
        self.severity
    }

    pub fn actions(&self) -> &[MitigationAction] {
        &self.actions
    }

    /// Case-insensitive match at the start of a word, so `fight` also
    /// matches `fighting` and `firearm` matches `firearms`.
    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        let mut prev: Option<char> = None;
        for (i, c) in lower.char_indices() {
            if prev.is_none_or(|p| !p.is_alphanumeric()) && lower[i..].starts_with(&self.keyword) {
                return true;
            }
            prev = Some(c);
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KeywordRule>", into = "Vec<KeywordRule>")]
pub struct Rulebook {
    rules: Vec<KeywordRule>,
}

impl Rulebook {
    pub fn new(rules: Vec<KeywordRule>) -> Result<Self, MitigationError> {
        if rules.is_empty() {
            return Err(MitigationError::EmptyRulebook);
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = rules.iter().find(|r| !seen.insert(r.keyword.as_str())) {
            return Err(MitigationError::DuplicateKeyword(dup.keyword.clone()));
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[KeywordRule] {
        &self.rules
    }

    pub fn lookup(&self, keyword: &str) -> Option<&KeywordRule> {
        let keyword = keyword.to_lowercase();
        self.rules.iter().find(|r| r.keyword == keyword)
    }

    /// The winning rule among those matching `text`: highest severity, then
    /// longest keyword, then lexicographically smallest keyword.
    pub fn best_match(&self, text: &str) -> Option<&KeywordRule> {
        self.rules.iter().filter(|r| r.matches(text)).min_by(|a, b| {
            b.severity
                .cmp(&a.severity)
                .then(b.keyword.chars().count().cmp(&a.keyword.chars().count()))
                .then(a.keyword.cmp(&b.keyword))
        })
    }

    /// Parses a JSON rule array. Errors name the line of the offending rule.
    pub fn from_json(text: &str) -> Result<Self, MitigationError> {
        Self::from_json_within(text, text)
    }

    /// Like [`Rulebook::from_json`] for `part`, a slice of `whole`; error
    /// positions refer to `whole`.
    pub(crate) fn from_json_within(whole: &str, part: &str) -> Result<Self, MitigationError> {
        let config = |at: &str, e: serde_json::Error| MitigationError::Config(crate::json_error_within(whole, at, &e));
        let items: Vec<&RawValue> = serde_json::from_str(part).map_err(|e| config(part, e))?;
        let rules = items
            .iter()
            .map(|item| serde_json::from_str::<KeywordRule>(item.get()).map_err(|e| config(item.get(), e)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rules)
    }
}

impl TryFrom<Vec<KeywordRule>> for Rulebook {
    type Error = MitigationError;

    fn try_from(rules: Vec<KeywordRule>) -> Result<Self, Self::Error> {
        Self::new(rules)
    }
}

impl From<Rulebook> for Vec<KeywordRule> {
    fn from(book: Rulebook) -> Self {
        book.rules
    }
}

impl Default for Rulebook {
    fn default() -> Self {
        default_rulebook()
    }
}

/// The four keyword rows of the anomaly/mitigation table. The "none" row is
/// the no-match default in [`super::select_actions`].
pub fn default_rulebook() -> Rulebook {
    use MitigationAction::*;
    let rule = |k: &str, class, severity, actions: Vec<MitigationAction>| {
        KeywordRule::new(k, class, severity, actions).expect("built-in rule is valid")
    };
    Rulebook::new(vec![
        rule("firearm", AnomalyClass::Hazardous, Severity::High, vec![Siren, Notify]),
        rule("fight", AnomalyClass::Hazardous, Severity::High, vec![Warn, Alert]),
        rule("obstruction", AnomalyClass::Conflict, Severity::Medium, vec![Replan]),
        rule("spill", AnomalyClass::Conflict, Severity::Medium, vec![Report, Avoid]),
    ])
    .expect("built-in rulebook is valid")
}
