//! Caption and classification stages.
//!
//! Both stages have a deterministic scripted backend (used for simulation and
//! tests) and a remote HTTP backend. The classifier is driven by a fixed
//! prompt and its output must follow a small response grammar, see
//! [`parse_response`].

mod grammar;
mod remote;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mitigation::Rulebook;
use crate::saliency::HeatmapSummary;
use crate::world::WorldFrame;

pub use grammar::parse_response;
pub use remote::{remote_caption, remote_classify, RemoteEndpointConfig, RemoteReply};

pub const EMPTY_SCENE_PHRASE: &str = "an empty scene";
const CAPTION_PREFIX: &str = "a view of ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("scene tag `{0}` has no lexicon entry")]
    UnknownTag(String),
    #[error("classifier response does not match the response grammar: {raw:?}")]
    UnparsedResponse { raw: String },
    #[error("remote endpoint timed out after {attempts} attempt(s)")]
    RemoteTimeout { attempts: u32 },
    #[error("remote endpoint unavailable after {attempts} attempt(s): {reason}")]
    RemoteUnavailable { attempts: u32, reason: String },
    #[error("remote protocol error: {0}")]
    RemoteProtocolError(String),
    #[error("invalid remote configuration: {0}")]
    BadRemoteConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionBackend {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub source_frame: u64,
    pub backend: CaptionBackend,
}

/// Scene tag to caption phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon(BTreeMap<String, String>);

impl Lexicon {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self(entries)
    }

    pub fn get(&self, tag: &str) -> Option<&str> {
        self.0.get(tag).map(String::as_str)
    }

    pub fn insert(&mut self, tag: impl Into<String>, phrase: impl Into<String>) {
        self.0.insert(tag.into(), phrase.into());
    }

    /// Entries of `other` override ours.
    pub fn merged(mut self, other: &Lexicon) -> Self {
        self.0.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
        self
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        let entries = [
            ("hallway", "a hallway"),
            ("corridor", "an empty corridor"),
            ("lab", "a makerspace lab"),
            ("door", "a doorway"),
            ("person", "a person walking"),
            ("bag", "an unattended bag"),
            ("sign", "a hazard sign on the wall"),
            ("spill", "a liquid spill on the floor"),
            ("firearm", "a person holding a firearm"),
            ("fight", "people fighting near the exit"),
            ("obstruction", "a cart causing an obstruction in the path"),
            ("poster_firearm", "a poster showing a firearm"),
            ("puddle", "a shiny patch on the floor"),
            ("crowd", "a small crowd gathered"),
        ];
        Self(entries.into_iter().map(|(k, v)| (k.to_owned(), v.to_owned())).collect())
    }
}

/// Comma-joined lexicon phrases in tag order, prefixed `"a view of "`.
pub fn scripted_caption(frame: &WorldFrame, lexicon: &Lexicon) -> Result<Caption, PerceptionError> {
    let phrases = frame
        .scene_tags
        .iter()
        .map(|tag| lexicon.get(tag).ok_or_else(|| PerceptionError::UnknownTag(tag.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let body = if phrases.is_empty() {
        EMPTY_SCENE_PHRASE.to_owned()
    } else {
        phrases.join(", ")
    };
    Ok(Caption {
        text: format!("{CAPTION_PREFIX}{body}"),
        source_frame: frame.frame_id,
        backend: CaptionBackend::Scripted,
    })
}

const PROMPT_HEAD: &str =
    "You are a mobile robot that monitors your environment for potential hazards and conflicts. The image caption is: '";
const PROMPT_MID: &str = "'. The heatmap analysis shows: '";
const PROMPT_TAIL: &str = "'. Analyze this information and classify any detected anomalies. \
If you detect a hazard (e.g., dangerous objects, environmental threats, safety violations), \
respond with 'HAZARDOUS: [brief description]' and 'REPORT'. \
If you detect a conflict (e.g., navigation conflicts, operational disruptions, rule violations), \
respond with 'CONFLICT: [brief description]' and 'AVOID'. \
If no anomalies are detected, respond with 'CLEAR: [brief description of normal conditions]' and 'RESUME'.";

/// Combined caption + heatmap context handed to the classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub caption: String,
    pub heatmap_summary: String,
    pub rendered: String,
}

pub fn render_prompt(caption: &Caption, summary: &HeatmapSummary) -> PromptContext {
    let rendered = [PROMPT_HEAD, &caption.text, PROMPT_MID, &summary.text, PROMPT_TAIL].concat();
    PromptContext {
        caption: caption.text.clone(),
        heatmap_summary: summary.text.clone(),
        rendered,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyClass {
    Hazardous,
    Conflict,
    Clear,
}

impl AnomalyClass {
    pub const ALL: [Self; 3] = [Self::Hazardous, Self::Conflict, Self::Clear];

    pub fn token(self) -> &'static str {
        match self {
            Self::Hazardous => "HAZARDOUS",
            Self::Conflict => "CONFLICT",
            Self::Clear => "CLEAR",
        }
    }

    /// The only directive the grammar accepts for this class.
    pub fn directive(self) -> Directive {
        match self {
            Self::Hazardous => Directive::Report,
            Self::Conflict => Directive::Avoid,
            Self::Clear => Directive::Resume,
        }
    }
}

impl fmt::Display for AnomalyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directive {
    Report,
    Avoid,
    Resume,
}

impl Directive {
    pub const ALL: [Self; 3] = [Self::Report, Self::Avoid, Self::Resume];

    pub fn token(self) -> &'static str {
        match self {
            Self::Report => "REPORT",
            Self::Avoid => "AVOID",
            Self::Resume => "RESUME",
        }
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedClassification {
    class: AnomalyClass,
    description: String,
    directive: Directive,
}

impl ParsedClassification {
    /// `None` unless `directive` is the one paired with `class`.
    pub fn new(class: AnomalyClass, description: impl Into<String>, directive: Directive) -> Option<Self> {
        (class.directive() == directive).then(|| Self {
            class,
            description: description.into(),
            directive,
        })
    }

    pub fn class(&self) -> AnomalyClass {
        self.class
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn directive(&self) -> Directive {
        self.directive
    }
}

/// Classifier result as seen by mitigation: either a grammar-conformant
/// classification or the raw text that failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierVerdict {
    Parsed(ParsedClassification),
    Unparsed { raw: String },
}

impl ClassifierVerdict {
    pub fn from_raw(raw: &str) -> Self {
        match parse_response(raw) {
            Ok(parsed) => Self::Parsed(parsed),
            Err(_) => Self::Unparsed { raw: raw.to_owned() },
        }
    }
}

/// Grammar-conformant response for a matched rule.
pub fn rule_response(class: AnomalyClass, keyword: &str) -> String {
    format!("{}: {keyword} detected {}", class.token(), class.directive().token())
}

/// Offline stand-in for the classifier: scans the caption for rulebook
/// keywords and answers with the mapped response, or CLEAR when none match.
pub fn scripted_classify(ctx: &PromptContext, rulebook: &Rulebook) -> String {
    match rulebook.best_match(&ctx.caption) {
        Some(rule) => rule_response(rule.class(), rule.keyword()),
        None => format!("CLEAR: {} RESUME", ctx.caption),
    }
}
