//! Evaluation report computed from a run log, plus its canonical JSON and
//! CSV forms.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::bus::RunLog;
use crate::metrics::{
    accuracy, confusion, detection_rate, latency_histogram, preference_score, ConfusionCounts, LatencyHistogram,
};
use crate::mitigation::{ActionLogEntry, MitigationAction, Severity};
use crate::world::RecordClass;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavReport {
    pub trajectory_m: f64,
    pub time_s: f64,
    /// Absent when anomaly detection is off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomalies_detected: Option<usize>,
    pub sudden_stops: usize,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEntry {
    pub frame_id: u64,
    pub class: RecordClass,
    pub severity: Severity,
    pub description: String,
    pub actions: Vec<MitigationAction>,
    pub at_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_of_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive_prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub ad_enabled: bool,
    pub frames: usize,
    pub confusion: ConfusionCounts,
    pub accuracy_pct: f64,
    pub detection_rate_pct: f64,
    pub correct: u64,
    pub neutral: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference_score_pct: Option<f64>,
    pub latency: LatencyHistogram,
    pub latency_share_below_8s_pct: f64,
    pub latency_share_below_14s_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nav: Option<NavReport>,
    pub anomalies: Vec<AnomalyEntry>,
    pub final_epsilon: f64,
    pub action_log: Vec<ActionLogEntry>,
}

impl EvalReport {
    pub fn non_clear_records(&self) -> usize {
        self.anomalies.len()
    }
}

/// Recomputes every metric from the log alone.
pub fn evaluate(log: &RunLog) -> Result<EvalReport, CliError> {
    if log.ticks.is_empty() {
        return Err(CliError::LogSchema("run log has no ticks".into()));
    }
    let schema = |e: crate::metrics::MetricsError| CliError::LogSchema(e.to_string());
    let pairs: Vec<(bool, bool)> = log
        .ticks
        .iter()
        .map(|t| (t.truth.is_anomalous(), !t.record.class.is_clear()))
        .collect();
    let counts = confusion(&pairs).map_err(schema)?;
    let total = log.ticks.len() as u64;
    let correct = log.ticks.iter().filter(|t| t.correct == Some(true)).count() as u64;
    let neutral = log
        .ticks
        .iter()
        .filter(|t| t.record.class == RecordClass::Unparsed)
        .count() as u64;
    let latencies: Vec<f64> = log.ticks.iter().map(|t| t.trace.t_total_s()).collect();
    let latency = latency_histogram(&latencies).map_err(schema)?;
    let preference_score_pct = match log.survey {
        Some(s) => Some(preference_score(s.u, s.n, s.t).map_err(schema)?.rounded()),
        None => None,
    };
    let anomalies = log
        .ticks
        .iter()
        .filter(|t| !t.record.class.is_clear())
        .map(|t| AnomalyEntry {
            frame_id: t.frame_id,
            class: t.record.class,
            severity: t.record.severity,
            description: t.record.description.clone(),
            actions: t.actions.iter().map(|a| a.action).collect(),
            at_s: t.completed_at,
            risk_of_loss: t.record.risk_of_loss,
            archive_prefix: t.archive.as_ref().map(|a| a.prefix.clone()),
        })
        .collect();
    let nav = log.nav.map(|m| NavReport {
        trajectory_m: m.trajectory_m,
        time_s: m.time_s,
        anomalies_detected: log.ad_enabled.then_some(m.anomalies_detected),
        sudden_stops: m.sudden_stops,
        reached_goal: m.reached_goal,
    });
    Ok(EvalReport {
        version: REPORT_VERSION,
        scenario: log.scenario.clone(),
        seed: log.seed,
        ad_enabled: log.ad_enabled,
        frames: log.ticks.len(),
        confusion: counts,
        accuracy_pct: accuracy(&counts).map_err(schema)?.rounded(),
        detection_rate_pct: detection_rate(correct, neutral, total).map_err(schema)?.rounded(),
        correct,
        neutral,
        preference_score_pct,
        latency_share_below_8s_pct: percent(latency.share_below(8.0)),
        latency_share_below_14s_pct: percent(latency.share_below(14.0)),
        latency,
        nav,
        anomalies,
        final_epsilon: log.final_epsilon,
        action_log: log.ticks.iter().flat_map(|t| t.actions.iter().cloned()).collect(),
    })
}

fn percent(share: f64) -> f64 {
    (share * 10_000.0).round() / 100.0
}

fn round_floats(value: Value, decimals: i32) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let scale = 10f64.powi(decimals);
            let x = n.as_f64().expect("f64 number");
            let r = (x * scale).round() / scale;
            // -0.0 and 0.0 print differently
            let r = if r == 0.0 { 0.0 } else { r };
            serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(|v| round_floats(v, decimals)).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_floats(v, decimals))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and floats rounded to three decimals.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report types serialize");
    let mut out = serde_json::to_string_pretty(&round_floats(v, 3)).expect("value serializes");
    out.push('\n');
    out
}

/// Pretty JSON with sorted keys and full float precision.
pub fn full_precision_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("log types serialize");
    let mut out = serde_json::to_string_pretty(&v).expect("value serializes");
    out.push('\n');
    out
}

pub const CSV_HEADER: &str = "condition,trajectory_m,time_s,anomalies_detected,sudden_stops";

/// One navigation row: `WAD` or `WoAD`, then the navigation columns; `--`
/// marks values that do not apply.
pub fn csv_row(report: &EvalReport) -> String {
    let condition = if report.ad_enabled { "WAD" } else { "WoAD" };
    let dash = || "--".to_owned();
    let anomalies = if report.ad_enabled {
        report
            .nav
            .as_ref()
            .and_then(|n| n.anomalies_detected)
            .unwrap_or(report.non_clear_records())
            .to_string()
    } else {
        dash()
    };
    let (traj, time, stops) = match &report.nav {
        Some(n) => (
            format!("{:.3}", n.trajectory_m),
            format!("{:.3}", n.time_s),
            n.sudden_stops.to_string(),
        ),
        None => (dash(), dash(), dash()),
    };
    format!("{condition},{traj},{time},{anomalies},{stops}")
}

pub fn csv(reports: &[&EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}
