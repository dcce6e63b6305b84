//! Scenario file format and its conversion into a runnable pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::value::RawValue;

use super::CliError;
use crate::bus::{BackendConfig, CaptureMode, PipelineConfig, Scenario, ScenarioFrame, SchedulerMode, StageDelays};
use crate::metrics::SurveyCounts;
use crate::mitigation::{RiskTable, Rulebook};
use crate::navsim::{Cell, GridWorld, DEFAULT_SPEED_MPS, DEFAULT_TRIGGER_RADIUS_CELLS};
use crate::perception::{Lexicon, RemoteEndpointConfig};
use crate::saliency::SummaryParams;
use crate::world::{Constraint, ConstraintSet, Grid, TruthLabel, WorldFrame, DEFAULT_STATE_DIM};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Scripted,
    Remote,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineSection {
    #[serde(default = "default_capture")]
    capture: CaptureMode,
    #[serde(default = "yes")]
    ad_enabled: bool,
    #[serde(default = "default_t_max")]
    t_max_s: f64,
    #[serde(default)]
    backend: BackendChoice,
    #[serde(default)]
    scheduler: SchedulerMode,
    #[serde(default)]
    summary: SummaryParams,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            capture: default_capture(),
            ad_enabled: true,
            t_max_s: default_t_max(),
            backend: BackendChoice::Scripted,
            scheduler: SchedulerMode::Deterministic,
            summary: SummaryParams::default(),
        }
    }
}

fn default_capture() -> CaptureMode {
    CaptureMode::Periodic { interval_s: 5.0 }
}

fn default_t_max() -> f64 {
    PipelineConfig::default().t_max_s
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
enum DelayModel {
    Fixed {
        delays: StageDelays,
    },
    /// Each stage drawn uniformly from `[low, high]` with the scenario seed.
    Uniform {
        low: StageDelays,
        high: StageDelays,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameSpec {
    frame_id: u64,
    #[serde(default)]
    captured_at: f64,
    #[serde(default)]
    scene_tags: Vec<String>,
    feature_maps: Vec<Grid>,
    saliency_weights: Vec<f64>,
    truth: TruthLabel,
    #[serde(default)]
    image_b64: Option<String>,
    #[serde(default)]
    delays: Option<StageDelays>,
    #[serde(default)]
    zone: Option<usize>,
    #[serde(default)]
    trigger: Option<Cell>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile<'a> {
    version: u32,
    name: String,
    seed: u64,
    #[serde(default = "default_dim")]
    state_dim: usize,
    #[serde(default)]
    pipeline: PipelineSection,
    #[serde(default)]
    remote: Option<RemoteEndpointConfig>,
    #[serde(default)]
    world: Option<GridWorld>,
    #[serde(default = "default_speed")]
    speed_mps: f64,
    #[serde(default = "default_radius")]
    trigger_radius_cells: usize,
    #[serde(default)]
    lexicon: BTreeMap<String, String>,
    #[serde(default, borrow)]
    rulebook: Option<&'a RawValue>,
    #[serde(default, borrow)]
    risk_table: Option<&'a RawValue>,
    #[serde(default)]
    delay_model: Option<DelayModel>,
    #[serde(default)]
    constraints: Vec<Constraint>,
    #[serde(default)]
    survey: Option<SurveyCounts>,
    #[serde(borrow)]
    frames: Vec<&'a RawValue>,
}

fn default_dim() -> usize {
    DEFAULT_STATE_DIM
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_MPS
}

fn default_radius() -> usize {
    DEFAULT_TRIGGER_RADIUS_CELLS
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub ad_enabled: Option<bool>,
    pub backend: Option<BackendChoice>,
    pub t_max_s: Option<f64>,
    pub seed: Option<u64>,
}

/// A loaded scenario, ready to build a pipeline from.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub config: PipelineConfig,
    pub lexicon: Lexicon,
    pub rulebook: Rulebook,
    pub risk: RiskTable,
    pub constraints: Option<ConstraintSet>,
    pub source: PathBuf,
}

fn line_of(whole: &str, part: &str) -> usize {
    let offset = (part.as_ptr() as usize)
        .saturating_sub(whole.as_ptr() as usize)
        .min(whole.len());
    whole[..offset].matches('\n').count() + 1
}

/// Reads `{...}` or a path string (relative to the scenario file).
fn resolve_ref<'a>(raw: &'a RawValue, base: &Path, storage: &'a mut String) -> Result<(&'a str, bool), CliError> {
    let text = raw.get();
    if text.trim_start().starts_with('"') {
        let rel: String = serde_json::from_str(text).expect("string literal");
        let path = base.join(rel);
        *storage =
            std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Ok((storage.as_str(), true))
    } else {
        Ok((text, false))
    }
}

pub fn load_scenario(path: &Path, overrides: &Overrides) -> Result<LoadedScenario, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text, path, overrides)
}

/// Parses and validates scenario text. `path` locates referenced files and
/// names the source in errors.
pub fn parse_scenario(text: &str, path: &Path, overrides: &Overrides) -> Result<LoadedScenario, CliError> {
    let name = path.display().to_string();
    let invalid = |msg: String| CliError::Validation(format!("{name}: {msg}"));
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    if file.version != SCENARIO_VERSION {
        return Err(invalid(format!(
            "unsupported version {} (expected {SCENARIO_VERSION})",
            file.version
        )));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let seed = overrides.seed.unwrap_or(file.seed);

    let mut lexicon = Lexicon::default();
    for (tag, phrase) in file.lexicon {
        lexicon.insert(tag, phrase);
    }

    let rulebook = match file.rulebook {
        None => Rulebook::default(),
        Some(raw) => {
            let mut storage = String::new();
            let (src, external) = resolve_ref(raw, base, &mut storage)?;
            let whole = if external { src } else { text };
            Rulebook::from_json_within(whole, src).map_err(|e| invalid(format!("rulebook: {e}")))?
        }
    };
    let risk = match file.risk_table {
        None => RiskTable::default(),
        Some(raw) => {
            let mut storage = String::new();
            let (src, external) = resolve_ref(raw, base, &mut storage)?;
            let whole = if external { src } else { text };
            RiskTable::from_json_within(whole, src).map_err(|e| invalid(format!("risk table: {e}")))?
        }
    };
    let constraints = if file.constraints.is_empty() {
        None
    } else {
        Some(ConstraintSet::new(file.constraints).map_err(|e| invalid(format!("constraints: {e}")))?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(file.frames.len());
    for raw in &file.frames {
        let line = line_of(text, raw.get());
        let entry: FrameSpec = serde_json::from_str(raw.get())
            .map_err(|e| invalid(format!("frame: {}", crate::json_error_within(text, raw.get(), &e))))?;
        let delays = match (entry.delays, &file.delay_model) {
            (Some(d), _) => d,
            (None, Some(DelayModel::Fixed { delays })) => *delays,
            (None, Some(DelayModel::Uniform { low, high })) => {
                sample_delays(&mut rng, low, high).map_err(|m| invalid(format!("delay_model: {m}")))?
            }
            (None, None) => {
                return Err(invalid(format!(
                    "frame {} at line {line}: no delays and no delay_model",
                    entry.frame_id
                )))
            }
        };
        frames.push((
            line,
            ScenarioFrame {
                frame: WorldFrame {
                    frame_id: entry.frame_id,
                    captured_at: entry.captured_at,
                    scene_tags: entry.scene_tags,
                    feature_maps: entry.feature_maps,
                    saliency_weights: entry.saliency_weights,
                    truth: entry.truth,
                    image_b64: entry.image_b64,
                },
                delays,
                zone: entry.zone,
                trigger: entry.trigger,
            },
        ));
    }

    for (dim_line, what) in constraints
        .iter()
        .flat_map(|c| c.constraints())
        .filter_map(|c| c.field.max_index().map(|i| (i, c.id.clone())))
    {
        if dim_line >= file.state_dim {
            return Err(invalid(format!(
                "constraint `{what}` reads index {dim_line} but state_dim is {}",
                file.state_dim
            )));
        }
    }

    let backend = match overrides.backend.unwrap_or(file.pipeline.backend) {
        BackendChoice::Scripted => BackendConfig::Scripted,
        BackendChoice::Remote => BackendConfig::Remote(
            file.remote
                .ok_or_else(|| invalid("remote backend selected but no `remote` section".into()))?,
        ),
    };
    let config = PipelineConfig {
        capture: file.pipeline.capture,
        ad_enabled: overrides.ad_enabled.unwrap_or(file.pipeline.ad_enabled),
        t_max_s: overrides.t_max_s.unwrap_or(file.pipeline.t_max_s),
        backend,
        scheduler: file.pipeline.scheduler,
        summary: file.pipeline.summary,
        budget: None,
    };
    config.validate().map_err(|e| invalid(e.to_string()))?;

    let lines: Vec<usize> = frames.iter().map(|(l, _)| *l).collect();
    let scenario = Scenario {
        name: file.name,
        seed,
        state_dim: file.state_dim,
        frames: frames.into_iter().map(|(_, f)| f).collect(),
        world: file.world,
        speed_mps: file.speed_mps,
        trigger_radius_cells: file.trigger_radius_cells,
        survey: file.survey,
    };
    if let Err(e) = scenario.validate(&lexicon) {
        // Point at the frame's line when the message names a frame index.
        let msg = e.to_string();
        let located = msg
            .strip_prefix("invalid scenario: frame ")
            .and_then(|rest| rest.split(|c: char| !c.is_ascii_digit()).next())
            .and_then(|i| i.parse::<usize>().ok())
            .and_then(|i| lines.get(i))
            .map(|line| format!("{msg} (line {line})"))
            .unwrap_or(msg);
        return Err(invalid(located));
    }
    if let Some(world) = &scenario.world {
        scenario.nav_check(world, &config).map_err(|e| invalid(e.to_string()))?;
    }

    Ok(LoadedScenario {
        scenario,
        config,
        lexicon,
        rulebook,
        risk,
        constraints,
        source: path.to_path_buf(),
    })
}

fn sample_delays(rng: &mut ChaCha8Rng, low: &StageDelays, high: &StageDelays) -> Result<StageDelays, String> {
    let mut draw = |lo: f64, hi: f64| -> Result<f64, String> {
        if hi < lo {
            return Err(format!("high {hi} below low {lo}"));
        }
        Ok(if hi == lo { lo } else { rng.random_range(lo..=hi) })
    };
    let d = StageDelays {
        camera_s: draw(low.camera_s, high.camera_s)?,
        blip_s: draw(low.blip_s, high.blip_s)?,
        heatmap_s: draw(low.heatmap_s, high.heatmap_s)?,
        llm_s: draw(low.llm_s, high.llm_s)?,
    };
    Ok(d)
}
