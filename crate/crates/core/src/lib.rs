//! Proactive anomaly detection and mitigation for an autonomous mobile robot
//! patrolling indoor spaces.
//!
//! Frames flow through a four-node pipeline (camera, captioner, heatmap,
//! classifier) on an in-process bus. Classifications are mapped to mitigation
//! actions, logged, archived and scored. A grid simulator measures the effect
//! on navigation, and an evaluation engine computes the detection metrics.

pub mod budget;
pub mod bus;
pub mod cli;
pub mod clock;
pub mod metrics;
pub mod mitigation;
pub mod navsim;
pub mod perception;
pub mod saliency;
pub mod world;

/// Rewrites a serde_json error raised while parsing `part`, a slice of
/// `whole`, so its line and column refer to `whole`.
pub(crate) fn json_error_within(whole: &str, part: &str, err: &serde_json::Error) -> String {
    let offset = (part.as_ptr() as usize)
        .saturating_sub(whole.as_ptr() as usize)
        .min(whole.len());
    let before = &whole[..offset];
    let start_column = before.len() - before.rfind('\n').map_or(0, |i| i + 1);
    // Errors raised by validation carry no position; point at the start of `part`.
    let (line, column) = match err.line() {
        0 => (before.matches('\n').count() + 1, start_column + 1),
        1 => (before.matches('\n').count() + 1, start_column + err.column()),
        l => (before.matches('\n').count() + l, err.column()),
    };
    let message = err.to_string();
    let message = message.split(" at line ").next().unwrap_or(&message);
    format!("{message} at line {line} column {column}")
}
