use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MitigationAction, MitigationError};
use crate::world::AnomalyRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    SimulatedCall,
    SimulatedEmail,
    SirenOn,
    LogOnly,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{channel:?} sink unreachable: {reason}")]
pub struct SinkError {
    pub channel: Delivery,
    pub reason: String,
}

/// Destination for responder output. Implementations must accept deliveries
/// from several threads.
pub trait Sink: Send + Sync {
    fn deliver(&self, channel: Delivery, message: &str) -> Result<(), SinkError>;
}

/// In-memory sink recording every delivery.
#[derive(Debug, Clone, Default)]
pub struct SimulatedSinks {
    log: Arc<Mutex<Vec<(Delivery, String)>>>,
}

impl SimulatedSinks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deliveries(&self) -> Vec<(Delivery, String)> {
        self.log.lock().expect("sink log poisoned").clone()
    }

    pub fn count(&self, channel: Delivery) -> usize {
        self.log
            .lock()
            .expect("sink log poisoned")
            .iter()
            .filter(|(c, _)| *c == channel)
            .count()
    }
}

impl Sink for SimulatedSinks {
    fn deliver(&self, channel: Delivery, message: &str) -> Result<(), SinkError> {
        self.log
            .lock()
            .expect("sink log poisoned")
            .push((channel, message.to_owned()));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLogEntry {
    pub action: MitigationAction,
    /// Frame id of the triggering record.
    pub triggered_by: u64,
    pub at: f64,
    pub delivery: Vec<Delivery>,
    pub message: String,
}

/// Responder state shared across a run: the sink and the siren.
pub struct Responders {
    sink: Box<dyn Sink>,
    siren_on: bool,
    last_at: f64,
}

impl Responders {
    pub fn new(sink: impl Sink + 'static) -> Self {
        Self {
            sink: Box::new(sink),
            siren_on: false,
            last_at: 0.0,
        }
    }

    pub fn simulated() -> (Self, SimulatedSinks) {
        let sinks = SimulatedSinks::new();
        (Self::new(sinks.clone()), sinks)
    }

    pub fn siren_on(&self) -> bool {
        self.siren_on
    }
}

fn routes(action: MitigationAction) -> &'static [Delivery] {
    use Delivery::*;
    use MitigationAction::*;
    match action {
        Siren => &[SirenOn],
        Notify => &[SimulatedCall, SimulatedEmail],
        Alert => &[SimulatedCall],
        Report => &[SimulatedEmail],
        Warn | Replan | Avoid | Resume | SafeStop => &[LogOnly],
    }
}

fn message(action: MitigationAction, record: &AnomalyRecord) -> String {
    let what = &record.description;
    match action {
        MitigationAction::Siren => format!("siren activated: {what}"),
        MitigationAction::Notify => format!("notifying operator: {what}"),
        MitigationAction::Warn => format!("Attention: {what}. Please keep a safe distance."),
        MitigationAction::Alert => format!("alerting security: {what}"),
        MitigationAction::Replan => format!("replanning path around: {what}"),
        MitigationAction::Report => format!("anomaly report for frame {}: {what}", record.frame_id),
        MitigationAction::Avoid => format!("avoiding area: {what}"),
        MitigationAction::Resume => "resuming normal operation".to_owned(),
        MitigationAction::SafeStop => format!("safe stop: classifier output unusable ({what})"),
    }
}

/// Runs one action through the responders, producing exactly one log entry.
/// Entry timestamps never decrease across calls.
pub fn execute_action(
    responders: &mut Responders,
    action: MitigationAction,
    record: &AnomalyRecord,
    at: f64,
) -> Result<ActionLogEntry, MitigationError> {
    let at = if at > responders.last_at {
        at
    } else {
        responders.last_at
    };
    let text = message(action, record);
    let delivery = routes(action).to_vec();
    for &channel in &delivery {
        responders
            .sink
            .deliver(channel, &text)
            .map_err(|e| MitigationError::SinkUnavailable(e.to_string()))?;
    }
    match action {
        MitigationAction::Siren => responders.siren_on = true,
        MitigationAction::Resume => responders.siren_on = false,
        _ => {}
    }
    responders.last_at = at;
    Ok(ActionLogEntry {
        action,
        triggered_by: record.frame_id,
        at,
        delivery,
        message: text,
    })
}
