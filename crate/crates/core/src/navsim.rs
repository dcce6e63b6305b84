//! Corridor simulator: grid world, shortest-path planning, anomaly-aware
//! replanning and the navigation metrics (trajectory length, time, sudden
//! stops).
//!
//! The robot moves one cell per tick. It knows the static occupancy map. Zone
//! cells that physically block motion are unknown to it until either a
//! detection reports them (with anomaly detection on) or it bumps into one.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::RobotState;

pub const DEFAULT_CELL_SIZE_M: f64 = 0.25;
pub const DEFAULT_SPEED_MPS: f64 = 0.5;
pub const DEFAULT_WAIT_TICKS: usize = 2;
pub const DEFAULT_TRIGGER_RADIUS_CELLS: usize = 6;
const MAX_TICKS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("no path from {from} to {to}")]
    NoPath { from: Cell, to: Cell },
    #[error("cell {0} is outside the world")]
    OutOfBounds(Cell),
    #[error("cell {0} is occupied")]
    Occupied(Cell),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("simulation made no progress after {0} ticks")]
    NoProgress(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn chebyshev(self, other: Cell) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub hazard: String,
    pub cells: Vec<Cell>,
    /// Whether the anomaly physically stops the robot (an obstruction does,
    /// a spill does not).
    #[serde(default = "yes")]
    pub blocks_motion: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld", into = "RawWorld")]
pub struct GridWorld {
    width: usize,
    height: usize,
    cell_size_m: f64,
    occupancy: Vec<bool>,
    start: Cell,
    goal: Cell,
    anomaly_zones: Vec<Zone>,
}

/// Serialized form: occupied cells listed explicitly.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    width: usize,
    height: usize,
    #[serde(default = "default_cell_size")]
    cell_size_m: f64,
    #[serde(default)]
    walls: Vec<Cell>,
    start: Cell,
    goal: Cell,
    #[serde(default)]
    anomaly_zones: Vec<Zone>,
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE_M
}

impl TryFrom<RawWorld> for GridWorld {
    type Error = NavError;

    fn try_from(raw: RawWorld) -> Result<Self, Self::Error> {
        let mut world = Self::empty(raw.width, raw.height, raw.cell_size_m, raw.start, raw.goal)?;
        for wall in raw.walls {
            world.set_occupied(wall, true)?;
        }
        for zone in raw.anomaly_zones {
            world.add_zone(zone)?;
        }
        world.check_endpoints()?;
        Ok(world)
    }
}

impl From<GridWorld> for RawWorld {
    fn from(w: GridWorld) -> Self {
        let walls = w.cells().filter(|&c| w.is_occupied(c)).collect();
        Self {
            width: w.width,
            height: w.height,
            cell_size_m: w.cell_size_m,
            walls,
            start: w.start,
            goal: w.goal,
            anomaly_zones: w.anomaly_zones,
        }
    }
}

impl GridWorld {
    pub fn empty(width: usize, height: usize, cell_size_m: f64, start: Cell, goal: Cell) -> Result<Self, NavError> {
        if width == 0 || height == 0 {
            return Err(NavError::InvalidWorld("dimensions must be positive".into()));
        }
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(NavError::InvalidWorld(format!(
                "cell size must be positive, got {cell_size_m}"
            )));
        }
        let world = Self {
            width,
            height,
            cell_size_m,
            occupancy: vec![false; width * height],
            start,
            goal,
            anomaly_zones: Vec::new(),
        };
        world.check_bounds(start)?;
        world.check_bounds(goal)?;
        Ok(world)
    }

    /// The 2.5 m × 14 m hallway: 10 × 56 cells, start and goal on the center
    /// line at either end.
    pub fn hallway() -> Self {
        Self::empty(10, 56, DEFAULT_CELL_SIZE_M, Cell::new(5, 0), Cell::new(5, 55)).expect("valid hallway")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn zones(&self) -> &[Zone] {
        &self.anomaly_zones
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    fn check_bounds(&self, c: Cell) -> Result<(), NavError> {
        if self.in_bounds(c) {
            Ok(())
        } else {
            Err(NavError::OutOfBounds(c))
        }
    }

    fn check_endpoints(&self) -> Result<(), NavError> {
        for c in [self.start, self.goal] {
            if self.is_occupied(c) {
                return Err(NavError::Occupied(c));
            }
        }
        Ok(())
    }

    fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.occupancy[self.index(c)]
    }

    /// Marks a static wall cell. Start and goal must stay free.
    pub fn set_occupied(&mut self, c: Cell, occupied: bool) -> Result<(), NavError> {
        self.check_bounds(c)?;
        if occupied && (c == self.start || c == self.goal) {
            return Err(NavError::Occupied(c));
        }
        let i = self.index(c);
        self.occupancy[i] = occupied;
        Ok(())
    }

    pub fn add_zone(&mut self, zone: Zone) -> Result<usize, NavError> {
        if zone.cells.is_empty() {
            return Err(NavError::InvalidWorld(format!("zone `{}` has no cells", zone.hazard)));
        }
        for &c in &zone.cells {
            self.check_bounds(c)?;
            if zone.blocks_motion && (c == self.start || c == self.goal) {
                return Err(NavError::Occupied(c));
            }
        }
        self.anomaly_zones.push(zone);
        Ok(self.anomaly_zones.len() - 1)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    /// In-bounds 4-neighbours in the order +x, −x, +y, −y.
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        let steps: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        steps.into_iter().filter_map(move |(dx, dy)| {
            let x = c.x.checked_add_signed(dx)?;
            let y = c.y.checked_add_signed(dy)?;
            let n = Cell::new(x, y);
            self.in_bounds(n).then_some(n)
        })
    }

    fn physically_blocked(&self, c: Cell) -> bool {
        self.is_occupied(c)
            || self
                .anomaly_zones
                .iter()
                .any(|z| z.blocks_motion && z.cells.contains(&c))
    }
}

/// Breadth-first search over free cells, treating `extra` as occupied too.
pub fn plan_path_avoiding(
    world: &GridWorld,
    start: Cell,
    goal: Cell,
    extra: &BTreeSet<Cell>,
) -> Result<Vec<Cell>, NavError> {
    for c in [start, goal] {
        world.check_bounds(c)?;
        if world.is_occupied(c) || (c != start && extra.contains(&c)) {
            return Err(NavError::Occupied(c));
        }
    }
    let blocked = |c: Cell| world.is_occupied(c) || extra.contains(&c);
    let mut parent: Vec<Option<Cell>> = vec![None; world.width * world.height];
    let mut seen = vec![false; world.width * world.height];
    seen[world.index(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if c == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while let Some(p) = parent[world.index(cur)] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Ok(path);
        }
        for n in world.neighbors(c) {
            let i = world.index(n);
            if !seen[i] && !blocked(n) {
                seen[i] = true;
                parent[i] = Some(c);
                queue.push_back(n);
            }
        }
    }
    Err(NavError::NoPath { from: start, to: goal })
}

/// Shortest 4-connected path including both endpoints.
pub fn plan_path(world: &GridWorld, start: Cell, goal: Cell) -> Result<Vec<Cell>, NavError> {
    plan_path_avoiding(world, start, goal, &BTreeSet::new())
}

/// Path length in metres (moves × cell size).
pub fn path_length_m(world: &GridWorld, path: &[Cell]) -> f64 {
    path.len().saturating_sub(1) as f64 * world.cell_size_m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanOutcome {
    Path(Vec<Cell>),
    /// No route around the zone; the robot must stop safely.
    Blocked,
}

/// New route from `current_path[0]` to its last cell with the zone treated as
/// occupied. The old remainder is kept when it already avoids the zone.
pub fn replan_on_anomaly(world: &GridWorld, current_path: &[Cell], zone: &Zone) -> ReplanOutcome {
    let (Some(&from), Some(&to)) = (current_path.first(), current_path.last()) else {
        return ReplanOutcome::Blocked;
    };
    let avoid: BTreeSet<Cell> = zone.cells.iter().copied().filter(|&c| c != from).collect();
    if !current_path.iter().any(|c| avoid.contains(c)) {
        return ReplanOutcome::Path(current_path.to_vec());
    }
    match plan_path_avoiding(world, from, to, &avoid) {
        Ok(path) => ReplanOutcome::Path(path),
        Err(_) => ReplanOutcome::Blocked,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CaptureSchedule {
    /// Frames are consumed in order, one every `interval_s`.
    Periodic { interval_s: f64 },
    /// A frame fires when the robot comes within the trigger radius of its
    /// trigger cell, or at its declared time when it has none.
    OnRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavCapture {
    /// Declared capture time, used by `OnRequest` frames without a trigger.
    pub captured_at: f64,
    pub trigger: Option<Cell>,
    /// Index into the world's anomaly zones.
    pub zone: Option<usize>,
    /// Ground truth and processing latency, used by [`TruthDetector`].
    pub anomalous: bool,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavScenario {
    pub captures: Vec<NavCapture>,
    pub schedule: CaptureSchedule,
    pub speed_mps: f64,
    pub trigger_radius_cells: usize,
    pub wait_ticks: usize,
    pub state_dim: usize,
}

impl NavScenario {
    pub fn new(captures: Vec<NavCapture>, schedule: CaptureSchedule) -> Self {
        Self {
            captures,
            schedule,
            speed_mps: DEFAULT_SPEED_MPS,
            trigger_radius_cells: DEFAULT_TRIGGER_RADIUS_CELLS,
            wait_ticks: DEFAULT_WAIT_TICKS,
            state_dim: crate::world::DEFAULT_STATE_DIM,
        }
    }

    pub fn validate(&self, world: &GridWorld) -> Result<(), NavError> {
        let bad = |m: String| Err(NavError::ScenarioInvalid(m));
        if !(self.speed_mps > 0.0 && self.speed_mps.is_finite()) {
            return bad(format!("speed must be positive, got {}", self.speed_mps));
        }
        if let CaptureSchedule::Periodic { interval_s } = self.schedule {
            if !(interval_s > 0.0 && interval_s.is_finite()) {
                return bad(format!("capture interval must be positive, got {interval_s}"));
            }
        }
        if self.state_dim < 2 {
            return bad("state dimension must be at least 2".into());
        }
        for (i, c) in self.captures.iter().enumerate() {
            if let Some(z) = c.zone {
                if z >= world.zones().len() {
                    return bad(format!("capture {i} references missing zone {z}"));
                }
            }
            if let Some(t) = c.trigger {
                if !world.in_bounds(t) {
                    return bad(format!("capture {i} trigger {t} is outside the world"));
                }
            }
            if !(c.captured_at >= 0.0 && c.latency_s >= 0.0 && c.latency_s.is_finite()) {
                return bad(format!("capture {i} has a negative time"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureResponse {
    /// Hazard or conflict reported.
    pub anomalous: bool,
    /// The classifier output was unusable; the robot halts briefly.
    pub safe_stop: bool,
    pub completed_at: f64,
}

/// Processes a capture. The simulator calls it when the capture fires and
/// acts on the response at `completed_at`.
pub trait CaptureHandler {
    type Error: From<NavError>;

    fn handle(&mut self, capture: usize, captured_at: f64, robot: &RobotState) -> Result<CaptureResponse, Self::Error>;
}

/// Perfect detector with the capture's declared latency, processing one
/// capture at a time.
#[derive(Debug, Clone)]
pub struct TruthDetector {
    truth: Vec<(bool, f64)>,
    busy_until: f64,
}

impl TruthDetector {
    pub fn new(scenario: &NavScenario) -> Self {
        Self {
            truth: scenario.captures.iter().map(|c| (c.anomalous, c.latency_s)).collect(),
            busy_until: 0.0,
        }
    }
}

impl CaptureHandler for TruthDetector {
    type Error = NavError;

    fn handle(&mut self, capture: usize, captured_at: f64, _: &RobotState) -> Result<CaptureResponse, NavError> {
        let (anomalous, latency) = self.truth[capture];
        let completed_at = captured_at.max(self.busy_until) + latency;
        self.busy_until = completed_at;
        Ok(CaptureResponse {
            anomalous,
            safe_stop: false,
            completed_at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NavMetrics {
    pub trajectory_m: f64,
    pub time_s: f64,
    pub anomalies_detected: usize,
    pub sudden_stops: usize,
    pub replans: usize,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavRun {
    pub metrics: NavMetrics,
    /// Every cell occupied, in order, including the start.
    pub visited: Vec<Cell>,
    pub safe_stopped: bool,
}

struct Pending {
    capture: usize,
    response: CaptureResponse,
}

struct Robot<'w> {
    world: &'w GridWorld,
    pos: Cell,
    path: Vec<Cell>,
    known: BTreeSet<Cell>,
    speed: f64,
    heading: f64,
    stops: usize,
}

impl Robot<'_> {
    fn command(&mut self, speed: f64) {
        if self.speed > 0.0 && speed == 0.0 && self.pos != self.world.goal {
            self.stops += 1;
        }
        self.speed = speed;
    }

    /// Replans when the remaining path crosses a known blocked cell. Returns
    /// false when no route exists.
    fn refresh_path(&mut self) -> Result<bool, NavError> {
        if !self.path.iter().skip(1).any(|c| self.known.contains(c)) {
            return Ok(true);
        }
        match plan_path_avoiding(self.world, self.pos, self.world.goal, &self.known) {
            Ok(p) => {
                self.path = p;
                Ok(true)
            }
            Err(NavError::NoPath { .. } | NavError::Occupied(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn state(&self, dim: usize) -> RobotState {
        let cs = self.world.cell_size_m;
        let mut q = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        q[0] = self.pos.x as f64 * cs;
        q[1] = self.pos.y as f64 * cs;
        if dim > 2 {
            q[2] = self.heading;
        }
        v[0] = self.speed * self.heading.cos();
        v[1] = self.speed * self.heading.sin();
        RobotState::new(q, v, Vec::new()).expect("dimension checked by the scenario")
    }
}

/// Runs the robot from start to goal with the built-in [`TruthDetector`].
pub fn simulate_run(world: &GridWorld, scenario: &NavScenario, ad_enabled: bool) -> Result<NavMetrics, NavError> {
    let mut detector = TruthDetector::new(scenario);
    simulate_with(world, scenario, ad_enabled, &mut detector).map(|run| run.metrics)
}

/// Runs the robot, sending captures to `handler`.
///
/// Each tick lasts `cell_size / speed`. With `ad_enabled`, a reported anomaly
/// marks its zone as blocked once the response completes, and the robot
/// replans from wherever it is. Without it, the robot only learns of a
/// blocking cell on contact: it stops, waits, then replans.
pub fn simulate_with<H: CaptureHandler>(
    world: &GridWorld,
    scenario: &NavScenario,
    ad_enabled: bool,
    handler: &mut H,
) -> Result<NavRun, H::Error> {
    scenario.validate(world)?;
    let dt = world.cell_size_m / scenario.speed_mps;
    let mut robot = Robot {
        world,
        pos: world.start,
        path: plan_path(world, world.start, world.goal)?,
        known: BTreeSet::new(),
        speed: 0.0,
        heading: std::f64::consts::FRAC_PI_2,
        stops: 0,
    };
    let mut metrics = NavMetrics::default();
    let mut visited = vec![world.start];
    let mut fired = vec![false; scenario.captures.len()];
    let mut next_periodic = 0usize;
    let mut pending: Vec<Pending> = Vec::new();
    let mut halt_ticks = 0usize;
    let mut safe_stopped = false;
    let mut t = 0.0f64;

    for tick in 0.. {
        if tick >= MAX_TICKS {
            return Err(NavError::NoProgress(tick).into());
        }

        // Captures due at this tick.
        let mut due = Vec::new();
        match scenario.schedule {
            CaptureSchedule::Periodic { interval_s } => {
                while next_periodic < scenario.captures.len() && next_periodic as f64 * interval_s <= t {
                    due.push((next_periodic, next_periodic as f64 * interval_s));
                    next_periodic += 1;
                }
            }
            CaptureSchedule::OnRequest => {
                for (i, c) in scenario.captures.iter().enumerate() {
                    let ready = match c.trigger {
                        Some(cell) => robot.pos.chebyshev(cell) <= scenario.trigger_radius_cells,
                        None => c.captured_at <= t,
                    };
                    if !fired[i] && ready {
                        due.push((i, t));
                    }
                }
            }
        }
        for (i, at) in due {
            fired[i] = true;
            let response = handler.handle(i, at, &robot.state(scenario.state_dim))?;
            pending.push(Pending { capture: i, response });
        }

        // Responses that have completed by now.
        let (ready, waiting): (Vec<_>, Vec<_>) = pending.into_iter().partition(|p| p.response.completed_at <= t);
        pending = waiting;
        let mut learned = false;
        for p in ready {
            if p.response.safe_stop {
                robot.command(0.0);
                halt_ticks = halt_ticks.max(scenario.wait_ticks);
            }
            if !(ad_enabled && p.response.anomalous) {
                continue;
            }
            metrics.anomalies_detected += 1;
            if let Some(z) = scenario.captures[p.capture].zone {
                for &c in &world.zones()[z].cells {
                    if c != robot.pos {
                        learned |= robot.known.insert(c);
                    }
                }
            }
        }
        if learned && robot.path.iter().skip(1).any(|c| robot.known.contains(c)) {
            metrics.replans += 1;
            if !robot.refresh_path()? {
                robot.command(0.0);
                safe_stopped = true;
                break;
            }
        }

        if robot.pos == world.goal {
            metrics.reached_goal = true;
            break;
        }
        if halt_ticks > 0 {
            halt_ticks -= 1;
            robot.command(0.0);
            t += dt;
            continue;
        }
        if robot.path.iter().skip(1).any(|c| robot.known.contains(c)) {
            metrics.replans += 1;
            if !robot.refresh_path()? {
                robot.command(0.0);
                safe_stopped = true;
                break;
            }
        }
        let next = robot.path[1];
        if world.physically_blocked(next) {
            // Contact: stop this tick, wait, then route around the cell.
            robot.known.insert(next);
            robot.command(0.0);
            halt_ticks = scenario.wait_ticks;
            t += dt;
            continue;
        }
        robot.heading = (next.y as f64 - robot.pos.y as f64).atan2(next.x as f64 - robot.pos.x as f64);
        robot.pos = next;
        robot.path.remove(0);
        robot.command(scenario.speed_mps);
        visited.push(next);
        metrics.trajectory_m += world.cell_size_m;
        t += dt;
    }

    metrics.time_s = t;
    metrics.sudden_stops = robot.stops;
    Ok(NavRun {
        metrics,
        visited,
        safe_stopped,
    })
}

/// Hallway with a single obstruction across most of the corridor, placed
/// according to `seed`. Returns the world and a periodic capture list whose
/// second frame observes the obstruction.
pub fn obstruction_variant(seed: u64) -> (GridWorld, NavScenario) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut world = GridWorld::hallway();
    let row = rng.random_range(30..50usize);
    let gap_left = rng.random_bool(0.5);
    let width = rng.random_range(6..9usize);
    let xs: Vec<usize> = if gap_left {
        (10 - width..10).collect()
    } else {
        (0..width).collect()
    };
    let cells = xs
        .iter()
        .flat_map(|&x| [Cell::new(x, row), Cell::new(x, row + 1)])
        .collect();
    let zone = world
        .add_zone(Zone {
            hazard: "obstruction".into(),
            cells,
            blocks_motion: true,
        })
        .expect("zone inside the hallway");
    let latency = rng.random_range(2.0..8.0);
    let captures = (0..8)
        .map(|i| NavCapture {
            captured_at: 0.0,
            trigger: None,
            zone: (i == 1).then_some(zone),
            anomalous: i == 1,
            latency_s: if i == 1 { latency } else { rng.random_range(2.0..6.0) },
        })
        .collect();
    let scenario = NavScenario::new(captures, CaptureSchedule::Periodic { interval_s: 5.0 });
    (world, scenario)
}
