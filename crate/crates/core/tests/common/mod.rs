#![allow(dead_code)]

use std::path::PathBuf;

use patrol::world::{Grid, TruthLabel, WorldFrame};

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Frame with a 4×4 map, hot in the top-right corner when anomalous.
pub fn frame(id: u64, tags: &[&str], truth: TruthLabel) -> WorldFrame {
    let hot = truth.is_anomalous();
    let map = Grid::from_fn(4, 4, |r, c| if hot && r < 2 && c >= 2 { 1.0 } else { 0.1 }).unwrap();
    WorldFrame {
        frame_id: id,
        captured_at: 0.0,
        scene_tags: tags.iter().map(|s| s.to_string()).collect(),
        feature_maps: vec![map],
        saliency_weights: vec![1.0],
        truth,
        image_b64: None,
    }
}

pub fn anomaly(kind: &str) -> TruthLabel {
    TruthLabel::AnomalyPresent { kind: kind.into() }
}
pub mod budget;
pub mod stub;
