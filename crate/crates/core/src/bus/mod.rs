//! In-process publish/subscribe fabric and the detection pipeline built on it.
//!
//! Each subscriber owns a bounded queue. Publishing blocks while any
//! subscriber's queue is full, so nothing is dropped. A per-topic lock makes
//! sequence assignment and fan-out atomic, which keeps every subscriber's view
//! of a topic in sequence order even with concurrent publishers.

mod nodes;
mod pipeline;
mod trace;

use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mitigation::MitigationError;
use crate::navsim::NavError;
use crate::perception::{Caption, ParsedClassification, PerceptionError};
use crate::saliency::HeatmapSummary;
use crate::world::{AnomalyRecord, WorldFrame};

pub use nodes::{NodeKind, NodeRegistry, INIT_ORDER};
pub use pipeline::{
    archive_prefix, init_pipeline, judge, run_scenario, ArchiveEntry, Archiver, BackendConfig, CaptureMode,
    MemoryArchiver, Pipeline, PipelineConfig, PipelineParts, RunLog, Scenario, ScenarioFrame, SchedulerMode,
    TickResult, RUNLOG_VERSION,
};
pub use trace::{Stage, StageDelays, StageLatencyTrace};

pub const CAMERA_IMAGE: &str = "camera/image";
pub const BLIP_CAPTION: &str = "blip/caption";
pub const HEATMAP_SUMMARY: &str = "heatmap/summary";
pub const LLM_CLASSIFICATION: &str = "llm/classification";

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{0}` already exists")]
    DuplicateTopic(String),
    #[error("topic `{topic}` carries {expected:?} payloads, got {got:?}")]
    PayloadMismatch {
        topic: String,
        expected: PayloadKind,
        got: PayloadKind,
    },
    #[error("cannot start {node:?} before {missing:?} is ready")]
    InitOrderViolation { node: NodeKind, missing: NodeKind },
    #[error("{0:?} already started")]
    AlreadyStarted(NodeKind),
    #[error("pipeline not initialized")]
    NotReady,
    #[error("topic `{0}` has no publisher left")]
    Disconnected(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Mitigation(#[from] MitigationError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error("archive failed: {0}")]
    Archive(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Frame,
    Caption,
    Summary,
    Classification,
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "body")]
pub enum Payload {
    Frame(WorldFrame),
    Caption(Caption),
    Summary(HeatmapSummary),
    Classification(ParsedClassification),
    Record(AnomalyRecord),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Self::Frame(_) => PayloadKind::Frame,
            Self::Caption(_) => PayloadKind::Caption,
            Self::Summary(_) => PayloadKind::Summary,
            Self::Classification(_) => PayloadKind::Classification,
            Self::Record(_) => PayloadKind::Record,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub topic: String,
    pub payload: Payload,
    pub published_at: f64,
    pub seq: u64,
}

struct TopicState {
    kind: PayloadKind,
    inner: Mutex<TopicInner>,
}

struct TopicInner {
    next_seq: u64,
    subscribers: Vec<SyncSender<Message>>,
}

/// Topic registry and router. Safe to share between threads.
pub struct Bus {
    topics: BTreeMap<String, TopicState>,
    capacity: usize,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl Bus {
    pub fn new(capacity: usize) -> Self {
        Self {
            topics: BTreeMap::new(),
            capacity: capacity.max(1),
        }
    }

    /// Bus with the four pipeline topics.
    pub fn with_pipeline_topics() -> Self {
        let mut bus = Self::default();
        for (name, kind) in [
            (CAMERA_IMAGE, PayloadKind::Frame),
            (BLIP_CAPTION, PayloadKind::Caption),
            (HEATMAP_SUMMARY, PayloadKind::Summary),
            (LLM_CLASSIFICATION, PayloadKind::Record),
        ] {
            bus.add_topic(name, kind).expect("fresh bus");
        }
        bus
    }

    pub fn add_topic(&mut self, name: &str, kind: PayloadKind) -> Result<(), BusError> {
        if self.topics.contains_key(name) {
            return Err(BusError::DuplicateTopic(name.to_owned()));
        }
        self.topics.insert(
            name.to_owned(),
            TopicState {
                kind,
                inner: Mutex::new(TopicInner {
                    next_seq: 0,
                    subscribers: Vec::new(),
                }),
            },
        );
        Ok(())
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn has_topic(&self, name: &str) -> bool {
        self.topics.contains_key(name)
    }

    fn topic(&self, name: &str) -> Result<&TopicState, BusError> {
        self.topics
            .get(name)
            .ok_or_else(|| BusError::UnknownTopic(name.to_owned()))
    }

    /// Subscribes from the next published message onward.
    pub fn subscribe(&self, topic: &str) -> Result<Subscription, BusError> {
        let state = self.topic(topic)?;
        let (tx, rx) = mpsc::sync_channel(self.capacity);
        state.inner.lock().expect("topic lock poisoned").subscribers.push(tx);
        Ok(Subscription {
            topic: topic.to_owned(),
            rx,
        })
    }

    /// Delivers to every live subscriber and returns the assigned sequence
    /// number. Subscriptions that were dropped are pruned.
    pub fn publish(&self, topic: &str, payload: Payload, published_at: f64) -> Result<u64, BusError> {
        let state = self.topic(topic)?;
        if payload.kind() != state.kind {
            return Err(BusError::PayloadMismatch {
                topic: topic.to_owned(),
                expected: state.kind,
                got: payload.kind(),
            });
        }
        let mut inner = state.inner.lock().expect("topic lock poisoned");
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let message = Message {
            topic: topic.to_owned(),
            payload,
            published_at,
            seq,
        };
        inner.subscribers.retain(|tx| tx.send(message.clone()).is_ok());
        Ok(seq)
    }

    pub fn subscriber_count(&self, topic: &str) -> Result<usize, BusError> {
        Ok(self
            .topic(topic)?
            .inner
            .lock()
            .expect("topic lock poisoned")
            .subscribers
            .len())
    }
}

pub struct Subscription {
    topic: String,
    rx: Receiver<Message>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Next queued message, if any, without blocking.
    pub fn try_recv(&self) -> Option<Message> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Message, BusError> {
        self.rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected => BusError::Disconnected(self.topic.clone()),
        })
    }

    /// Everything currently queued.
    pub fn drain(&self) -> Vec<Message> {
        std::iter::from_fn(|| self.try_recv()).collect()
    }
}
