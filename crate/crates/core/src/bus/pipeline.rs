use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    Bus, BusError, NodeKind, NodeRegistry, Payload, StageDelays, StageLatencyTrace, Subscription, BLIP_CAPTION,
    CAMERA_IMAGE, HEATMAP_SUMMARY, LLM_CLASSIFICATION,
};
use crate::budget::{enforce_budget, BudgetAllocation, BudgetVerdict};
use crate::clock::{Clock, VirtualClock, WallClock};
use crate::metrics::SurveyCounts;
use crate::mitigation::{
    default_rulebook, execute_action, select_actions, ActionLogEntry, EpsilonRule, EpsilonTracker, Responders,
    RiskTable, Rulebook,
};
use crate::navsim::{
    simulate_with, CaptureHandler, CaptureResponse, Cell, GridWorld, NavCapture, NavMetrics, NavScenario,
};
use crate::perception::{
    remote_caption, remote_classify, render_prompt, scripted_caption, scripted_classify, Caption, ClassifierVerdict,
    Lexicon, RemoteEndpointConfig,
};
use crate::saliency::{heatmap_for_frame, summarize_heatmap, Heatmap, HeatmapSummary, SummaryParams};
use crate::world::{
    check_constraints, snapshot_state, AnomalyRecord, ConstraintSet, ConstraintVerdict, DetectionOutcome, RecordClass,
    RobotState, TruthLabel, WorldFrame, DEFAULT_STATE_DIM,
};

pub use crate::navsim::CaptureSchedule as CaptureMode;

pub const RUNLOG_VERSION: u32 = 1;

/// Description attached to every frame while detection is switched off.
const INACTIVE_RESPONSE: &str = "CLEAR: anomaly detection inactive RESUME";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendConfig {
    Scripted,
    Remote(RemoteEndpointConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    /// Every node runs on the calling thread.
    #[default]
    Deterministic,
    /// Caption and heatmap nodes run on their own threads within a tick.
    Concurrent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub capture: CaptureMode,
    pub ad_enabled: bool,
    pub t_max_s: f64,
    pub backend: BackendConfig,
    pub scheduler: SchedulerMode,
    pub summary: SummaryParams,
    /// When set, every tick is checked against these stage timeouts.
    pub budget: Option<BudgetAllocation>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            capture: CaptureMode::Periodic { interval_s: 5.0 },
            ad_enabled: true,
            t_max_s: 14.0,
            backend: BackendConfig::Scripted,
            scheduler: SchedulerMode::Deterministic,
            summary: SummaryParams::default(),
            budget: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), BusError> {
        if let CaptureMode::Periodic { interval_s } = self.capture {
            if !(interval_s > 0.0 && interval_s.is_finite()) {
                return Err(BusError::InvalidConfig(format!(
                    "capture interval must be positive, got {interval_s}"
                )));
            }
        }
        if !(self.t_max_s > 0.0 && self.t_max_s.is_finite()) {
            return Err(BusError::InvalidConfig(format!(
                "t_max must be positive, got {}",
                self.t_max_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub prefix: String,
    pub files: Vec<String>,
}

/// Stores the frame, heatmap and report of every anomalous tick.
pub trait Archiver: Send {
    fn archive(
        &mut self,
        frame: &WorldFrame,
        heatmap: &Heatmap,
        record: &AnomalyRecord,
        at: f64,
    ) -> Result<ArchiveEntry, BusError>;
}

/// `<virtual ms, zero-padded>-<frame id>`.
pub fn archive_prefix(at: f64, frame_id: u64) -> String {
    format!("{:010}-{frame_id}", (at * 1000.0).round() as u64)
}

/// Keeps archive entries in memory; clones share the same list.
type Archived = (ArchiveEntry, WorldFrame, Heatmap, AnomalyRecord);

#[derive(Debug, Clone, Default)]
pub struct MemoryArchiver {
    entries: Arc<Mutex<Vec<Archived>>>,
}

impl MemoryArchiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> Vec<ArchiveEntry> {
        self.entries
            .lock()
            .expect("archive poisoned")
            .iter()
            .map(|e| e.0.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("archive poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Archiver for MemoryArchiver {
    fn archive(
        &mut self,
        frame: &WorldFrame,
        heatmap: &Heatmap,
        record: &AnomalyRecord,
        at: f64,
    ) -> Result<ArchiveEntry, BusError> {
        let mut entries = self.entries.lock().expect("archive poisoned");
        let base = archive_prefix(at, frame.frame_id);
        let taken: BTreeSet<&str> = entries.iter().map(|e| e.0.prefix.as_str()).collect();
        let prefix = (0..)
            .map(|n| if n == 0 { base.clone() } else { format!("{base}-{n}") })
            .find(|p| !taken.contains(p.as_str()))
            .expect("unbounded suffixes");
        let entry = ArchiveEntry {
            files: ["frame.json", "heatmap.pgm", "report.json"]
                .iter()
                .map(|ext| format!("{prefix}.{ext}"))
                .collect(),
            prefix,
        };
        entries.push((entry.clone(), frame.clone(), heatmap.clone(), record.clone()));
        Ok(entry)
    }
}

/// Everything a pipeline needs besides its configuration.
pub struct PipelineParts {
    pub lexicon: Lexicon,
    pub rulebook: Rulebook,
    pub risk: RiskTable,
    pub constraints: Option<ConstraintSet>,
    pub responders: Responders,
    pub archiver: Box<dyn Archiver>,
    pub state_dim: usize,
}

impl Default for PipelineParts {
    fn default() -> Self {
        Self {
            lexicon: Lexicon::default(),
            rulebook: default_rulebook(),
            risk: RiskTable::default(),
            constraints: None,
            responders: Responders::simulated().0,
            archiver: Box::new(MemoryArchiver::new()),
            state_dim: DEFAULT_STATE_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickResult {
    pub frame_id: u64,
    pub captured_at: f64,
    pub started_at: f64,
    pub completed_at: f64,
    pub truth: TruthLabel,
    pub caption: String,
    pub heatmap_summary: HeatmapSummary,
    pub raw_response: String,
    pub record: AnomalyRecord,
    pub trace: StageLatencyTrace,
    pub actions: Vec<ActionLogEntry>,
    pub archive: Option<ArchiveEntry>,
    /// `None` when the classifier output could not be parsed.
    pub correct: Option<bool>,
    pub confidence: f64,
    pub epsilon: f64,
    pub replan_requested: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintVerdict>,
}

struct Subscriptions {
    classifier_caption: Subscription,
    classifier_summary: Subscription,
    heatmap_in: Subscription,
    captioner_in: Subscription,
    mitigation_in: Subscription,
}

/// A running pipeline: four nodes on a bus, the virtual clock, responders and
/// the ε tracker.
pub struct Pipeline {
    config: PipelineConfig,
    bus: Bus,
    registry: NodeRegistry,
    pending: Vec<(NodeKind, Subscription)>,
    subs: Option<Subscriptions>,
    lexicon: Lexicon,
    rulebook: Rulebook,
    risk: RiskTable,
    constraints: Option<ConstraintSet>,
    responders: Responders,
    archiver: Box<dyn Archiver>,
    epsilon: EpsilonTracker,
    clock: VirtualClock,
    wall: WallClock,
    robot: RobotState,
}

/// Starts a pipeline with default parts, nodes brought up in order.
pub fn init_pipeline(config: PipelineConfig) -> Result<Pipeline, BusError> {
    Pipeline::new(config, PipelineParts::default())
}

impl Pipeline {
    pub fn new(config: PipelineConfig, parts: PipelineParts) -> Result<Self, BusError> {
        let mut pipeline = Self::manual(config, parts)?;
        for node in super::INIT_ORDER {
            pipeline.start_node(node)?;
        }
        Ok(pipeline)
    }

    /// Pipeline with no node started; see [`Pipeline::start_node`].
    pub fn manual(config: PipelineConfig, parts: PipelineParts) -> Result<Self, BusError> {
        config.validate()?;
        let robot = RobotState::at_rest(parts.state_dim).map_err(|e| BusError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            epsilon: EpsilonTracker::new(config.ad_enabled, EpsilonRule::with_target(config.t_max_s)),
            config,
            bus: Bus::with_pipeline_topics(),
            registry: NodeRegistry::new(),
            pending: Vec::new(),
            subs: None,
            lexicon: parts.lexicon,
            rulebook: parts.rulebook,
            risk: parts.risk,
            constraints: parts.constraints,
            responders: parts.responders,
            archiver: parts.archiver,
            clock: VirtualClock::new(),
            wall: WallClock::new(),
            robot,
        })
    }

    /// Starts one node, subscribing it to its inputs. Fails if the nodes
    /// before it in the init order are not up yet.
    pub fn start_node(&mut self, node: NodeKind) -> Result<(), BusError> {
        self.registry.start(node)?;
        match node {
            NodeKind::Classifier => {
                self.pending.push((node, self.bus.subscribe(BLIP_CAPTION)?));
                self.pending.push((node, self.bus.subscribe(HEATMAP_SUMMARY)?));
                self.pending.push((node, self.bus.subscribe(LLM_CLASSIFICATION)?));
            }
            NodeKind::Heatmap | NodeKind::Captioner => {
                self.pending.push((node, self.bus.subscribe(CAMERA_IMAGE)?));
            }
            NodeKind::Camera => {
                let mut by_topic = |kind: NodeKind, topic: &str| {
                    let i = self
                        .pending
                        .iter()
                        .position(|(k, s)| *k == kind && s.topic() == topic)
                        .expect("subscribed when the node started");
                    self.pending.remove(i).1
                };
                self.subs = Some(Subscriptions {
                    classifier_caption: by_topic(NodeKind::Classifier, BLIP_CAPTION),
                    classifier_summary: by_topic(NodeKind::Classifier, HEATMAP_SUMMARY),
                    mitigation_in: by_topic(NodeKind::Classifier, LLM_CLASSIFICATION),
                    heatmap_in: by_topic(NodeKind::Heatmap, CAMERA_IMAGE),
                    captioner_in: by_topic(NodeKind::Captioner, CAMERA_IMAGE),
                });
            }
        }
        Ok(())
    }

    pub fn is_ready(&self) -> bool {
        self.registry.is_ready()
    }

    pub fn registry(&self) -> &NodeRegistry {
        &self.registry
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn epsilon(&self) -> &EpsilonTracker {
        &self.epsilon
    }

    pub fn responders(&self) -> &Responders {
        &self.responders
    }

    pub fn now_s(&self) -> f64 {
        self.clock.now_s()
    }

    pub fn set_robot_state(&mut self, state: RobotState) {
        self.robot = state;
    }

    pub fn rulebook(&self) -> &Rulebook {
        &self.rulebook
    }

    /// One pass of the detection loop on `frame`: capture, caption and
    /// heatmap, classification, mitigation, archiving and the ε update.
    /// The tick starts at the later of the capture time and the end of the
    /// previous tick.
    pub fn run_tick(&mut self, frame: &WorldFrame, delays: &StageDelays) -> Result<TickResult, BusError> {
        let Some(subs) = self.subs.as_mut() else {
            return Err(BusError::NotReady);
        };
        frame.validate().map_err(|e| BusError::ScenarioInvalid(e.to_string()))?;
        let started_at = frame.captured_at.max(self.clock.now_s());
        let camera_done = started_at + delays.camera_s;
        self.bus
            .publish(CAMERA_IMAGE, Payload::Frame(frame.clone()), camera_done)?;

        let env = NodeEnv {
            bus: &self.bus,
            lexicon: &self.lexicon,
            backend: &self.config.backend,
            wall: &self.wall,
            summary: self.config.summary,
        };
        let (caption, heat) = match self.config.scheduler {
            SchedulerMode::Deterministic => (
                env.caption_node(&mut subs.captioner_in, camera_done, delays.blip_s),
                env.heatmap_node(&mut subs.heatmap_in, camera_done + delays.heatmap_s),
            ),
            SchedulerMode::Concurrent => std::thread::scope(|s| {
                let env = &env;
                let cap_in = &mut subs.captioner_in;
                let heat_in = &mut subs.heatmap_in;
                let c = s.spawn(move || env.caption_node(cap_in, camera_done, delays.blip_s));
                let h = s.spawn(move || env.heatmap_node(heat_in, camera_done + delays.heatmap_s));
                (
                    c.join().expect("caption node panicked"),
                    h.join().expect("heatmap node panicked"),
                )
            }),
        };
        let (caption, blip_s) = caption?;
        let heatmap = heat?;

        // Classifier node: consume its two inputs.
        let caption_msg = subs
            .classifier_caption
            .try_recv()
            .ok_or_else(|| BusError::Disconnected(BLIP_CAPTION.into()))?;
        let summary_msg = subs
            .classifier_summary
            .try_recv()
            .ok_or_else(|| BusError::Disconnected(HEATMAP_SUMMARY.into()))?;
        let (Payload::Caption(caption_in), Payload::Summary(summary)) = (caption_msg.payload, summary_msg.payload)
        else {
            unreachable!("topic payload kinds are enforced on publish");
        };
        debug_assert_eq!(caption_in, caption);

        let ctx = render_prompt(&caption_in, &summary);
        let (raw, network_s, processing_s) = if !self.config.ad_enabled {
            (INACTIVE_RESPONSE.to_owned(), 0.0, 0.0)
        } else {
            match &self.config.backend {
                BackendConfig::Scripted => (scripted_classify(&ctx, &self.rulebook), 0.0, delays.llm_s),
                BackendConfig::Remote(cfg) => {
                    let t0 = self.wall.now_s();
                    match remote_classify(&ctx, frame.image_b64.as_deref(), cfg, &self.wall) {
                        Ok(reply) => (reply.raw, reply.t_network_s, reply.t_processing_s),
                        Err(e) => (format!("remote classifier failed: {e}"), self.wall.now_s() - t0, 0.0),
                    }
                }
            }
        };
        let trace = StageLatencyTrace::new(delays.camera_s, blip_s, delays.heatmap_s, network_s, processing_s)?;
        let completed_at = started_at + trace.t_total_s();
        self.clock.advance_to(completed_at);

        let verdict = ClassifierVerdict::from_raw(&raw);
        let plan = select_actions(&verdict, &self.rulebook);
        let (class, description, directive) = match &verdict {
            ClassifierVerdict::Parsed(p) => (
                match p.class() {
                    crate::perception::AnomalyClass::Hazardous => RecordClass::Hazardous,
                    crate::perception::AnomalyClass::Conflict => RecordClass::Conflict,
                    crate::perception::AnomalyClass::Clear => RecordClass::Clear,
                },
                p.description().to_owned(),
                Some(p.directive()),
            ),
            ClassifierVerdict::Unparsed { raw } => (RecordClass::Unparsed, raw.clone(), None),
        };
        let risk_of_loss = plan
            .matched_keyword
            .as_deref()
            .and_then(|k| self.risk.risk_of_loss(k).ok());
        let record = AnomalyRecord {
            frame_id: frame.frame_id,
            class,
            description,
            directive,
            severity: plan.severity,
            matched_keyword: plan.matched_keyword.clone(),
            risk_of_loss,
            snapshot: snapshot_state(&self.robot, frame),
        };
        self.bus
            .publish(LLM_CLASSIFICATION, Payload::Record(record.clone()), completed_at)?;

        // Mitigation consumes the classification.
        let Some(Payload::Record(record)) = subs.mitigation_in.try_recv().map(|m| m.payload) else {
            return Err(BusError::Disconnected(LLM_CLASSIFICATION.into()));
        };
        let actions = plan
            .actions
            .iter()
            .map(|&a| execute_action(&mut self.responders, a, &record, completed_at))
            .collect::<Result<Vec<_>, _>>()?;
        let archive = if record.class.is_clear() {
            None
        } else {
            Some(self.archiver.archive(frame, &heatmap, &record, completed_at)?)
        };

        let correct = judge(&frame.truth, &record);
        let confidence = if record.class == RecordClass::Unparsed {
            0.0
        } else {
            1.0
        };
        let outcome = DetectionOutcome::new(record.clone(), confidence, correct, trace.t_total_s());
        let epsilon = self.epsilon.update(&outcome);

        Ok(TickResult {
            frame_id: frame.frame_id,
            captured_at: frame.captured_at,
            started_at,
            completed_at,
            truth: frame.truth.clone(),
            caption: caption_in.text,
            heatmap_summary: summary,
            raw_response: raw,
            replan_requested: !record.class.is_clear(),
            record,
            trace,
            actions,
            archive,
            correct,
            confidence,
            epsilon,
            budget: self.config.budget.as_ref().map(|a| enforce_budget(&trace, a)),
            constraints: self.constraints.as_ref().map(|c| check_constraints(&self.robot, c)),
        })
    }
}

struct NodeEnv<'a> {
    bus: &'a Bus,
    lexicon: &'a Lexicon,
    backend: &'a BackendConfig,
    wall: &'a WallClock,
    summary: SummaryParams,
}

impl NodeEnv<'_> {
    fn take_frame(sub: &mut Subscription) -> Result<WorldFrame, BusError> {
        match sub.try_recv().map(|m| m.payload) {
            Some(Payload::Frame(f)) => Ok(f),
            _ => Err(BusError::Disconnected(CAMERA_IMAGE.into())),
        }
    }

    /// Returns the caption and the time charged to the caption stage.
    fn caption_node(&self, sub: &mut Subscription, at: f64, scripted_s: f64) -> Result<(Caption, f64), BusError> {
        let frame = Self::take_frame(sub)?;
        let (caption, spent) = match (self.backend, frame.image_b64.as_deref()) {
            (BackendConfig::Remote(cfg), Some(image)) => remote_caption(image, frame.frame_id, cfg, self.wall)?,
            _ => (scripted_caption(&frame, self.lexicon)?, scripted_s),
        };
        self.bus
            .publish(BLIP_CAPTION, Payload::Caption(caption.clone()), at + spent)?;
        Ok((caption, spent))
    }

    fn heatmap_node(&self, sub: &mut Subscription, at: f64) -> Result<Heatmap, BusError> {
        let frame = Self::take_frame(sub)?;
        let heatmap = heatmap_for_frame(&frame).map_err(|e| BusError::ScenarioInvalid(e.to_string()))?;
        let summary = summarize_heatmap(&heatmap, self.summary);
        self.bus.publish(HEATMAP_SUMMARY, Payload::Summary(summary), at)?;
        Ok(heatmap)
    }
}

/// Whether the record agrees with ground truth. Anomalies must also match
/// the labelled kind when a rule keyword was matched. Unparsed output has no
/// verdict.
pub fn judge(truth: &TruthLabel, record: &AnomalyRecord) -> Option<bool> {
    match (record.class, truth) {
        (RecordClass::Unparsed, _) => None,
        (RecordClass::Clear, t) => Some(!t.is_anomalous()),
        (_, TruthLabel::Clear) => Some(false),
        (_, TruthLabel::AnomalyPresent { kind }) => Some(record.matched_keyword.as_deref().is_none_or(|k| k == kind)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFrame {
    pub frame: WorldFrame,
    pub delays: StageDelays,
    /// Anomaly zone (index into the world's zones) this frame observes.
    pub zone: Option<usize>,
    /// Cell whose vicinity triggers an on-request capture.
    pub trigger: Option<Cell>,
}

/// Validated runtime scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub state_dim: usize,
    pub frames: Vec<ScenarioFrame>,
    pub world: Option<GridWorld>,
    pub speed_mps: f64,
    pub trigger_radius_cells: usize,
    pub survey: Option<SurveyCounts>,
}

impl Scenario {
    pub fn validate(&self, lexicon: &Lexicon) -> Result<(), BusError> {
        let bad = |m: String| Err(BusError::ScenarioInvalid(m));
        if self.frames.is_empty() {
            return bad("scenario has no frames".into());
        }
        if self.state_dim < 2 {
            return bad(format!("state_dim must be at least 2, got {}", self.state_dim));
        }
        let mut ids = BTreeSet::new();
        for (i, sf) in self.frames.iter().enumerate() {
            let f = &sf.frame;
            if !ids.insert(f.frame_id) {
                return bad(format!("frame {i}: duplicate frame_id {}", f.frame_id));
            }
            if let Err(e) = heatmap_for_frame(f) {
                return bad(format!("frame {i} (id {}): {e}", f.frame_id));
            }
            if let Some(tag) = f.scene_tags.iter().find(|t| lexicon.get(t).is_none()) {
                return bad(format!(
                    "frame {i} (id {}): scene tag `{tag}` has no lexicon entry",
                    f.frame_id
                ));
            }
            if !(f.captured_at >= 0.0 && f.captured_at.is_finite()) {
                return bad(format!("frame {i}: captured_at must be >= 0"));
            }
            match (&self.world, sf.zone, sf.trigger) {
                (None, Some(_), _) | (None, _, Some(_)) => {
                    return bad(format!("frame {i}: zone/trigger given but the scenario has no world"))
                }
                (Some(w), Some(z), _) if z >= w.zones().len() => {
                    return bad(format!("frame {i}: zone {z} does not exist"))
                }
                (Some(w), _, Some(c)) if !w.in_bounds(c) => {
                    return bad(format!("frame {i}: trigger {c} is outside the world"))
                }
                _ => {}
            }
        }
        if let Some(s) = self.survey {
            if s.t == 0 || s.u + s.n > s.t {
                return bad(format!("survey counts inconsistent: u={}, n={}, t={}", s.u, s.n, s.t));
            }
        }
        Ok(())
    }

    /// Checks the navigation part against `world`.
    pub fn nav_check(&self, world: &GridWorld, config: &PipelineConfig) -> Result<(), BusError> {
        Ok(self.nav_scenario(config.capture).validate(world)?)
    }

    fn nav_scenario(&self, capture: CaptureMode) -> NavScenario {
        let captures = self
            .frames
            .iter()
            .map(|sf| NavCapture {
                captured_at: sf.frame.captured_at,
                trigger: sf.trigger,
                zone: sf.zone,
                anomalous: sf.frame.truth.is_anomalous(),
                latency_s: StageLatencyTrace::from_delays(&sf.delays).t_total_s(),
            })
            .collect();
        let mut nav = NavScenario::new(captures, capture);
        nav.speed_mps = self.speed_mps;
        nav.trigger_radius_cells = self.trigger_radius_cells;
        nav.state_dim = self.state_dim;
        nav
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub ad_enabled: bool,
    pub t_max_s: f64,
    pub ticks: Vec<TickResult>,
    pub final_epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nav: Option<NavMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey: Option<SurveyCounts>,
}

struct Driver<'a> {
    pipeline: &'a mut Pipeline,
    scenario: &'a Scenario,
    ticks: Vec<TickResult>,
}

impl CaptureHandler for Driver<'_> {
    type Error = BusError;

    fn handle(&mut self, capture: usize, captured_at: f64, robot: &RobotState) -> Result<CaptureResponse, BusError> {
        let sf = &self.scenario.frames[capture];
        let mut frame = sf.frame.clone();
        frame.captured_at = captured_at;
        self.pipeline.set_robot_state(robot.clone());
        let tick = self.pipeline.run_tick(&frame, &sf.delays)?;
        let response = CaptureResponse {
            anomalous: matches!(tick.record.class, RecordClass::Hazardous | RecordClass::Conflict),
            safe_stop: tick.record.class == RecordClass::Unparsed,
            completed_at: tick.completed_at,
        };
        self.ticks.push(tick);
        Ok(response)
    }
}

/// Runs every frame of `scenario` through the pipeline.
///
/// With a world, the robot navigates it and frames are captured per the
/// capture mode until the goal is reached. Without one, frames are processed
/// in order: periodic capture puts frame `i` at `i · interval`, on-request
/// capture keeps the declared times.
pub fn run_scenario(pipeline: &mut Pipeline, scenario: &Scenario) -> Result<RunLog, BusError> {
    scenario.validate(&pipeline.lexicon)?;
    if !pipeline.is_ready() {
        return Err(BusError::NotReady);
    }
    let capture = pipeline.config.capture;
    let (ticks, nav) = match &scenario.world {
        Some(world) => {
            let nav = scenario.nav_scenario(capture);
            let ad = pipeline.config.ad_enabled;
            let mut driver = Driver {
                pipeline,
                scenario,
                ticks: Vec::new(),
            };
            let run = simulate_with(world, &nav, ad, &mut driver)?;
            (driver.ticks, Some(run.metrics))
        }
        None => {
            let mut ticks = Vec::with_capacity(scenario.frames.len());
            for (i, sf) in scenario.frames.iter().enumerate() {
                let mut frame = sf.frame.clone();
                if let CaptureMode::Periodic { interval_s } = capture {
                    frame.captured_at = i as f64 * interval_s;
                }
                ticks.push(pipeline.run_tick(&frame, &sf.delays)?);
            }
            (ticks, None)
        }
    };
    Ok(RunLog {
        version: RUNLOG_VERSION,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        ad_enabled: pipeline.config.ad_enabled,
        t_max_s: pipeline.config.t_max_s,
        ticks,
        final_epsilon: pipeline.epsilon.epsilon(),
        nav,
        survey: scenario.survey,
    })
}
