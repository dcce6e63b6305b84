use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::archive::DirArchiver;
use super::report::{canonical_json, csv, evaluate, full_precision_json, EvalReport};
use super::scenario::{load_scenario, LoadedScenario, Overrides};
use super::CliError;
use crate::budget::{allocate, BudgetAllocation, StageProfile};
use crate::bus::{run_scenario, BusError, Pipeline, PipelineParts, RunLog, Stage};
use crate::mitigation::Responders;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFlags {
    pub overrides: Overrides,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: EvalReport,
    pub log: RunLog,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub runlog_json: PathBuf,
    pub archive_dir: PathBuf,
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|e| io(path, e))
}

fn runtime(e: BusError) -> CliError {
    match e {
        BusError::ScenarioInvalid(m) | BusError::InvalidConfig(m) => CliError::Validation(m),
        other => CliError::Runtime(other.to_string()),
    }
}

fn execute(loaded: LoadedScenario, archive_dir: &Path) -> Result<RunLog, CliError> {
    let parts = PipelineParts {
        lexicon: loaded.lexicon,
        rulebook: loaded.rulebook,
        risk: loaded.risk,
        constraints: loaded.constraints,
        responders: Responders::simulated().0,
        archiver: Box::new(DirArchiver::new(archive_dir)?),
        state_dim: loaded.scenario.state_dim,
    };
    let mut pipeline = Pipeline::new(loaded.config, parts).map_err(runtime)?;
    run_scenario(&mut pipeline, &loaded.scenario).map_err(runtime)
}

/// Runs a scenario and writes `report.json`, `report.csv`, `runlog.json`
/// and the `archive/` directory under the output directory.
pub fn cmd_run(scenario_path: &Path, flags: &RunFlags) -> Result<RunArtifacts, CliError> {
    let loaded = load_scenario(scenario_path, &flags.overrides)?;
    let out = flags.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let archive_dir = out.join("archive");
    let log = execute(loaded, &archive_dir)?;
    let report = evaluate(&log)?;
    let report_json = out.join("report.json");
    let report_csv = out.join("report.csv");
    let runlog_json = out.join("runlog.json");
    write(&report_json, &canonical_json(&report))?;
    write(&report_csv, &csv(&[&report]))?;
    write(&runlog_json, &full_precision_json(&log))?;
    Ok(RunArtifacts {
        report,
        log,
        report_json,
        report_csv,
        runlog_json,
        archive_dir,
    })
}

pub fn read_runlog(path: &Path) -> Result<RunLog, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let log: RunLog =
        serde_json::from_str(&text).map_err(|e| CliError::LogSchema(format!("{}: {e}", path.display())))?;
    if log.version != crate::bus::RUNLOG_VERSION {
        return Err(CliError::LogSchema(format!(
            "unsupported run log version {}",
            log.version
        )));
    }
    Ok(log)
}

/// Recomputes the report from a saved run log.
pub fn cmd_replay(log_path: &Path) -> Result<EvalReport, CliError> {
    evaluate(&read_runlog(log_path)?)
}

/// Builds stage profiles from run logs and allocates the latency budget.
pub fn cmd_profile(log_paths: &[PathBuf], t_max_s: f64) -> Result<BudgetAllocation, CliError> {
    let mut samples: BTreeMap<Stage, Vec<f64>> = BTreeMap::new();
    for path in log_paths {
        for tick in read_runlog(path)?.ticks {
            for stage in Stage::ALL {
                samples.entry(stage).or_default().push(tick.trace.stage_s(stage));
            }
        }
    }
    if samples.is_empty() {
        return Err(CliError::LogSchema("no ticks to profile".into()));
    }
    // Stages that never took time (e.g. the classifier with detection off)
    // cannot be profiled.
    let profiles = samples
        .into_iter()
        .filter(|(_, v)| v.iter().any(|&s| s > 0.0))
        .map(|(stage, v)| {
            let positive: Vec<f64> = v.into_iter().filter(|&s| s > 0.0).collect();
            StageProfile::from_samples(stage, &positive)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::LogSchema(e.to_string()))?;
    allocate(&profiles, t_max_s).map_err(|e| CliError::Validation(e.to_string()))
}

/// Runs the scenario with detection off and on, writing both reports and a
/// two-row `compare.csv`.
pub fn cmd_compare(scenario_path: &Path, flags: &RunFlags) -> Result<(EvalReport, EvalReport), CliError> {
    let out = flags.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let run = |ad: bool, sub: &str| {
        let mut f = flags.clone();
        f.overrides.ad_enabled = Some(ad);
        f.out = Some(out.join(sub));
        cmd_run(scenario_path, &f).map(|a| a.report)
    };
    let off = run(false, "woad")?;
    let on = run(true, "wad")?;
    write(&out.join("compare.csv"), &csv(&[&off, &on]))?;
    Ok((off, on))
}
