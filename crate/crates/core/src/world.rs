//! Robot world model: state vectors, goals, trajectories, perception frames,
//! hazard/loss sets and the operational constraint set.
//!
//! Everything here is immutable once constructed. Constructors validate the
//! invariants so downstream code never has to re-check them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mitigation::{RiskTable, Severity};
use crate::perception::Directive;

/// Default state dimension: x, y, heading.
pub const DEFAULT_STATE_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("state dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        what: &'static str,
    },
    #[error("trajectory sample {index}: {reason}")]
    BadTrajectory { index: usize, reason: String },
    #[error("grid must be non-empty and rectangular")]
    BadGrid,
    #[error("feature maps have differing shapes")]
    FeatureMapShapes,
    #[error("constraint set must contain at least one constraint")]
    EmptyConstraintSet,
    #[error("duplicate constraint id `{0}`")]
    DuplicateConstraint(String),
    #[error("risk table references hazard `{0}` which is not in the hazardous set")]
    UnknownHazard(String),
    #[error("risk table references loss class `{0}` which is not in the loss set")]
    UnknownLoss(String),
}

/// An observed environment object, pose relative to the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvObject {
    pub label: String,
    pub relative_pose: Vec<f64>,
}

/// Robot state `(q, v, q_env)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    position_orientation: Vec<f64>,
    velocity: Vec<f64>,
    env_objects: Vec<EnvObject>,
}

impl RobotState {
    pub fn new(
        position_orientation: Vec<f64>,
        velocity: Vec<f64>,
        env_objects: Vec<EnvObject>,
    ) -> Result<Self, WorldError> {
        let n = position_orientation.len();
        if n < 2 {
            return Err(WorldError::DimensionTooSmall(n));
        }
        if velocity.len() != n {
            return Err(WorldError::DimensionMismatch {
                expected: n,
                actual: velocity.len(),
                what: "velocity",
            });
        }
        if let Some(obj) = env_objects.iter().find(|o| o.relative_pose.len() != n) {
            return Err(WorldError::DimensionMismatch {
                expected: n,
                actual: obj.relative_pose.len(),
                what: "environment object pose",
            });
        }
        Ok(Self {
            position_orientation,
            velocity,
            env_objects,
        })
    }

    /// A state at rest at the origin.
    pub fn at_rest(dim: usize) -> Result<Self, WorldError> {
        Self::new(vec![0.0; dim], vec![0.0; dim], Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.position_orientation.len()
    }

    pub fn position_orientation(&self) -> &[f64] {
        &self.position_orientation
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn env_objects(&self) -> &[EnvObject] {
        &self.env_objects
    }

    /// Euclidean norm of the translational velocity (first two components).
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    /// Distance to the nearest environment object (translational part), or
    /// `None` when nothing is observed.
    pub fn nearest_object_distance(&self) -> Option<f64> {
        self.env_objects
            .iter()
            .map(|o| o.relative_pose[0].hypot(o.relative_pose[1]))
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    target: Vec<f64>,
}

impl Goal {
    pub fn new(target: Vec<f64>, state: &RobotState) -> Result<Self, WorldError> {
        if target.len() != state.dim() {
            return Err(WorldError::DimensionMismatch {
                expected: state.dim(),
                actual: target.len(),
                what: "goal",
            });
        }
        Ok(Self { target })
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time_s: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Sampled trajectory over `[0, T]`. Time must start at zero and strictly
/// increase; this is checked on construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self, WorldError> {
        let Some(first) = samples.first() else {
            return Err(WorldError::BadTrajectory {
                index: 0,
                reason: "trajectory is empty".into(),
            });
        };
        if first.time_s != 0.0 {
            return Err(WorldError::BadTrajectory {
                index: 0,
                reason: format!("must start at t=0, starts at {}", first.time_s),
            });
        }
        let dim = first.position.len();
        for (i, s) in samples.iter().enumerate() {
            if s.position.len() != dim || s.velocity.len() != dim {
                return Err(WorldError::BadTrajectory {
                    index: i,
                    reason: "inconsistent dimension".into(),
                });
            }
        }
        for (i, pair) in samples.windows(2).enumerate() {
            // negated comparison also rejects NaN
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(pair[1].time_s > pair[0].time_s) {
                return Err(WorldError::BadTrajectory {
                    index: i + 1,
                    reason: format!("time {} does not follow {}", pair[1].time_s, pair[0].time_s),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.time_s)
    }
}

/// Row-major 2D grid of reals. Always non-empty and rectangular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl Grid {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self, WorldError> {
        if rows == 0 || cols == 0 {
            return Err(WorldError::BadGrid);
        }
        Ok(Self {
            rows,
            cols,
            cells: vec![value; rows * cols],
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, WorldError> {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, WorldError> {
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(WorldError::BadGrid);
        }
        let n = rows.len();
        Ok(Self {
            rows: n,
            cols,
            cells: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, WorldError> {
        let mut grid = Self::zeros(rows, cols)?;
        for r in 0..rows {
            for c in 0..cols {
                grid.cells[r * cols + c] = f(r, c);
            }
        }
        Ok(grid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.cells[row * self.cols + col] = value;
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn max(&self) -> f64 {
        self.cells.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.cells.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Grid {
    type Error = WorldError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl From<Grid> for Vec<Vec<f64>> {
    fn from(grid: Grid) -> Self {
        grid.to_rows()
    }
}

/// Ground-truth annotation attached to a frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Clear,
    AnomalyPresent { kind: String },
}

impl TruthLabel {
    pub fn is_anomalous(&self) -> bool {
        matches!(self, Self::AnomalyPresent { .. })
    }
}

/// One perception sample. Scene tags and feature maps stand in for the
/// camera image; `image_b64` is passed through untouched to remote backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFrame {
    pub frame_id: u64,
    pub captured_at: f64,
    pub scene_tags: Vec<String>,
    pub feature_maps: Vec<Grid>,
    /// Per-map channel weights used by the heatmap stage.
    pub saliency_weights: Vec<f64>,
    pub truth: TruthLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
}

impl WorldFrame {
    /// Checks that all feature maps share a shape.
    pub fn validate(&self) -> Result<(), WorldError> {
        let mut shapes = self.feature_maps.iter().map(Grid::shape);
        if let Some(first) = shapes.next() {
            if shapes.any(|s| s != first) {
                return Err(WorldError::FeatureMapShapes);
            }
        }
        Ok(())
    }
}

/// Known hazardous classes `H` and loss classes `L`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HazardSets {
    pub hazardous: BTreeSet<String>,
    pub loss: BTreeSet<String>,
}

impl HazardSets {
    /// Hazard and loss sets exactly covering a risk table.
    pub fn from_risk_table(table: &RiskTable) -> Self {
        let mut sets = Self::default();
        for (hazard, losses) in table.entries() {
            sets.hazardous.insert(hazard.clone());
            sets.loss.extend(losses.keys().cloned());
        }
        sets
    }

    /// Every (hazard, loss) pair in the table must come from these sets.
    pub fn check(&self, table: &RiskTable) -> Result<(), WorldError> {
        for (hazard, losses) in table.entries() {
            if !self.hazardous.contains(hazard) {
                return Err(WorldError::UnknownHazard(hazard.clone()));
            }
            if let Some(loss) = losses.keys().find(|l| !self.loss.contains(*l)) {
                return Err(WorldError::UnknownLoss(loss.clone()));
            }
        }
        Ok(())
    }

    /// A hazardous class seen to cause a loss joins `H`.
    pub fn record_loss_event(&mut self, hazard: &str, loss: &str) {
        self.hazardous.insert(hazard.to_owned());
        self.loss.insert(loss.to_owned());
    }
}

/// State quantity a constraint compares against its bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum StateField {
    Speed,
    Position(usize),
    Velocity(usize),
    NearestObjectDistance,
}

impl StateField {
    fn read(self, state: &RobotState) -> Result<f64, String> {
        let component = |v: &[f64], i: usize, what: &str| {
            v.get(i)
                .copied()
                .ok_or_else(|| format!("{what} index {i} out of range for dimension {}", v.len()))
        };
        match self {
            Self::Speed => Ok(state.speed()),
            Self::Position(i) => component(state.position_orientation(), i, "position"),
            Self::Velocity(i) => component(state.velocity(), i, "velocity"),
            Self::NearestObjectDistance => Ok(state.nearest_object_distance().unwrap_or(f64::INFINITY)),
        }
    }

    pub fn max_index(self) -> Option<usize> {
        match self {
            Self::Position(i) | Self::Velocity(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Lt,
    Le,
    Ge,
    Gt,
}

impl Comparison {
    fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Self::Lt => value < bound,
            Self::Le => value <= bound,
            Self::Ge => value >= bound,
            Self::Gt => value > bound,
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lt => "<",
            Self::Le => "<=",
            Self::Ge => ">=",
            Self::Gt => ">",
        })
    }
}

/// One member `Ω_i`: `field op bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub rule: String,
    pub field: StateField,
    pub op: Comparison,
    pub bound: f64,
}

impl Constraint {
    pub fn evaluate(&self, state: &RobotState) -> Result<bool, String> {
        let value = self.field.read(state)?;
        if value.is_nan() {
            return Err(format!("{:?} evaluated to NaN", self.field));
        }
        Ok(self.op.holds(value, self.bound))
    }
}

/// `Ω_safety`, the intersection of its members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Constraint>", into = "Vec<Constraint>")]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> Result<Self, WorldError> {
        if constraints.is_empty() {
            return Err(WorldError::EmptyConstraintSet);
        }
        let mut seen = BTreeSet::new();
        for c in &constraints {
            if !seen.insert(c.id.as_str()) {
                return Err(WorldError::DuplicateConstraint(c.id.clone()));
            }
        }
        Ok(Self { constraints })
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }
}

impl TryFrom<Vec<Constraint>> for ConstraintSet {
    type Error = WorldError;

    fn try_from(value: Vec<Constraint>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ConstraintSet> for Vec<Constraint> {
    fn from(set: ConstraintSet) -> Self {
        set.constraints
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub satisfied: bool,
    /// Failing constraint ids, in declaration order.
    pub violated_ids: Vec<String>,
    /// Messages for constraints that could not be evaluated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Evaluates every member of `omega`. A constraint that cannot be evaluated
/// counts as violated.
pub fn check_constraints(state: &RobotState, omega: &ConstraintSet) -> ConstraintVerdict {
    let mut violated_ids = Vec::new();
    let mut diagnostics = Vec::new();
    for c in omega.constraints() {
        match c.evaluate(state) {
            Ok(true) => {}
            Ok(false) => violated_ids.push(c.id.clone()),
            Err(msg) => {
                diagnostics.push(format!("{}: {msg}", c.id));
                violated_ids.push(c.id.clone());
            }
        }
    }
    ConstraintVerdict {
        satisfied: violated_ids.is_empty(),
        violated_ids,
        diagnostics,
    }
}

/// Frozen copy of the robot state at the moment a frame was captured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub frame_id: u64,
    pub captured_at: f64,
    pub state: RobotState,
}

pub fn snapshot_state(state: &RobotState, frame: &WorldFrame) -> StateSnapshot {
    StateSnapshot {
        frame_id: frame.frame_id,
        captured_at: frame.captured_at,
        state: state.clone(),
    }
}

/// Class assigned to a processed frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordClass {
    Hazardous,
    Conflict,
    Clear,
    /// The classifier output did not match the response grammar.
    Unparsed,
}

impl RecordClass {
    pub fn is_clear(self) -> bool {
        self == Self::Clear
    }
}

/// A classified frame together with its mitigation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub frame_id: u64,
    pub class: RecordClass,
    pub description: String,
    pub directive: Option<Directive>,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_keyword: Option<String>,
    /// Highest loss probability for the matched hazard, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_of_loss: Option<f64>,
    pub snapshot: StateSnapshot,
}

/// Detection plus the uncertainty `U` and the replay verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub record: AnomalyRecord,
    confidence: f64,
    pub correct: Option<bool>,
    pub latency_s: f64,
}

impl DetectionOutcome {
    /// `confidence` is clamped into `[0, 1]`; `latency_s` below zero becomes 0.
    pub fn new(record: AnomalyRecord, confidence: f64, correct: Option<bool>, latency_s: f64) -> Self {
        let confidence = if confidence.is_nan() {
            0.0
        } else {
            confidence.clamp(0.0, 1.0)
        };
        Self {
            record,
            confidence,
            correct,
            latency_s: latency_s.max(0.0),
        }
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}
