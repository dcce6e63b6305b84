//! Saliency heatmaps: rectified weighted sum of feature maps, plus the
//! region summary published on `heatmap/summary`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Grid, WorldFrame};

pub const DEFAULT_ACTIVATION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_REGIONS: usize = 3;
pub const NO_REGIONS_TEXT: &str = "no salient regions";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaliencyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("activation threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("max_regions must be at least 1")]
    BadMaxRegions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub grid: Grid,
    pub source_frame: u64,
}

/// `out[i,j] = max(0, Σ_k weights[k] · maps[k][i,j])`.
pub fn combine_feature_maps(weights: &[f64], maps: &[Grid]) -> Result<Grid, SaliencyError> {
    if maps.is_empty() {
        return Err(SaliencyError::ShapeMismatch("no feature maps".into()));
    }
    if weights.len() != maps.len() {
        return Err(SaliencyError::ShapeMismatch(format!(
            "{} weights for {} feature maps",
            weights.len(),
            maps.len()
        )));
    }
    let shape = maps[0].shape();
    if let Some(bad) = maps.iter().find(|m| m.shape() != shape) {
        return Err(SaliencyError::ShapeMismatch(format!(
            "feature map {:?} differs from {:?}",
            bad.shape(),
            shape
        )));
    }

    let mut out = Grid::zeros(shape.0, shape.1).expect("maps are non-empty");
    for (alpha, map) in weights.iter().zip(maps) {
        for (acc, a) in out.cells_mut().iter_mut().zip(map.cells()) {
            *acc += alpha * a;
        }
    }
    for cell in out.cells_mut() {
        // f64::max(NaN, 0) is 0, so NaN activations clamp too
        *cell = cell.max(0.0);
    }
    Ok(out)
}

pub fn heatmap_for_frame(frame: &WorldFrame) -> Result<Heatmap, SaliencyError> {
    Ok(Heatmap {
        grid: combine_feature_maps(&frame.saliency_weights, &frame.feature_maps)?,
        source_frame: frame.frame_id,
    })
}

/// Threshold (as a fraction of the heatmap max) and region cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSummaryParams")]
pub struct SummaryParams {
    activation_threshold: f64,
    max_regions: usize,
}

#[derive(Deserialize)]
struct RawSummaryParams {
    activation_threshold: f64,
    max_regions: usize,
}

impl TryFrom<RawSummaryParams> for SummaryParams {
    type Error = SaliencyError;

    fn try_from(raw: RawSummaryParams) -> Result<Self, Self::Error> {
        Self::new(raw.activation_threshold, raw.max_regions)
    }
}

impl SummaryParams {
    pub fn new(activation_threshold: f64, max_regions: usize) -> Result<Self, SaliencyError> {
        if !(activation_threshold > 0.0 && activation_threshold <= 1.0) {
            return Err(SaliencyError::BadThreshold(activation_threshold));
        }
        if max_regions == 0 {
            return Err(SaliencyError::BadMaxRegions);
        }
        Ok(Self {
            activation_threshold,
            max_regions,
        })
    }

    pub fn activation_threshold(&self) -> f64 {
        self.activation_threshold
    }

    pub fn max_regions(&self) -> usize {
        self.max_regions
    }
}

impl Default for SummaryParams {
    fn default() -> Self {
        Self {
            activation_threshold: DEFAULT_ACTIVATION_THRESHOLD,
            max_regions: DEFAULT_MAX_REGIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Unweighted mean (row, col) of member cells.
    pub centroid: (f64, f64),
    pub cells: usize,
    pub area_fraction: f64,
    pub mean_activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub source_frame: u64,
    pub regions: Vec<Region>,
    /// Components found before truncation to `max_regions`.
    pub total_regions: usize,
    pub text: String,
}

/// Groups super-threshold cells into 4-connected regions and renders the
/// one-line description.
pub fn summarize_heatmap(heatmap: &Heatmap, params: SummaryParams) -> HeatmapSummary {
    let grid = &heatmap.grid;
    let peak = grid.max();
    let mut regions = if peak > 0.0 {
        components(grid, params.activation_threshold * peak)
    } else {
        Vec::new()
    };
    let total_regions = regions.len();

    regions.sort_by(|a, b| {
        b.mean_activation
            .total_cmp(&a.mean_activation)
            .then(a.centroid.0.total_cmp(&b.centroid.0))
            .then(a.centroid.1.total_cmp(&b.centroid.1))
    });
    regions.truncate(params.max_regions);

    let text = match regions.first() {
        None => NO_REGIONS_TEXT.to_owned(),
        Some(top) => format!(
            "{} salient region{}; strongest at ({},{}) covering {:.1}% of frame",
            regions.len(),
            if regions.len() == 1 { "" } else { "s" },
            top.centroid.0.round() as i64,
            top.centroid.1.round() as i64,
            top.area_fraction * 100.0
        ),
    };
    HeatmapSummary {
        source_frame: heatmap.source_frame,
        regions,
        total_regions,
        text,
    }
}

fn components(grid: &Grid, cutoff: f64) -> Vec<Region> {
    let (rows, cols) = grid.shape();
    let total = (rows * cols) as f64;
    let hot = |r: usize, c: usize| grid.get(r, c) >= cutoff;
    let mut seen = vec![false; rows * cols];
    let mut regions = Vec::new();
    let mut stack = Vec::new();

    for r0 in 0..rows {
        for c0 in 0..cols {
            if seen[r0 * cols + c0] || !hot(r0, c0) {
                continue;
            }
            seen[r0 * cols + c0] = true;
            stack.push((r0, c0));
            let (mut n, mut sr, mut sc, mut sa) = (0usize, 0.0, 0.0, 0.0);
            while let Some((r, c)) = stack.pop() {
                n += 1;
                sr += r as f64;
                sc += c as f64;
                sa += grid.get(r, c);
                let neighbours = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
                for (nr, nc) in neighbours {
                    if nr < rows && nc < cols && !seen[nr * cols + nc] && hot(nr, nc) {
                        seen[nr * cols + nc] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            let count = n as f64;
            regions.push(Region {
                centroid: (sr / count, sc / count),
                cells: n,
                area_fraction: count / total,
                mean_activation: sa / count,
            });
        }
    }
    regions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(grid: Grid) -> Heatmap {
        Heatmap { grid, source_frame: 1 }
    }

    #[test]
    fn zero_map_stays_zero() {
        let maps = vec![Grid::zeros(4, 4).unwrap()];
        let out = combine_feature_maps(&[1.0], &maps).unwrap();
        assert_eq!(out, Grid::zeros(4, 4).unwrap());
    }

    #[test]
    fn negative_sum_clamps() {
        let maps = vec![
            Grid::from_rows(vec![vec![1.0]]).unwrap(),
            Grid::from_rows(vec![vec![2.0]]).unwrap(),
        ];
        let out = combine_feature_maps(&[1.0, -2.0], &maps).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn shape_errors() {
        let a = Grid::zeros(2, 2).unwrap();
        let b = Grid::zeros(2, 3).unwrap();
        assert!(matches!(
            combine_feature_maps(&[1.0, 1.0], &[a.clone(), b]),
            Err(SaliencyError::ShapeMismatch(_))
        ));
        assert!(matches!(
            combine_feature_maps(&[1.0], &[a.clone(), a.clone()]),
            Err(SaliencyError::ShapeMismatch(_))
        ));
        assert!(matches!(
            combine_feature_maps(&[], &[]),
            Err(SaliencyError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn all_zero_heatmap_has_no_regions() {
        let s = summarize_heatmap(&heat(Grid::zeros(5, 5).unwrap()), SummaryParams::default());
        assert!(s.regions.is_empty());
        assert_eq!(s.text, NO_REGIONS_TEXT);
    }

    #[test]
    fn single_hot_cell() {
        let mut g = Grid::zeros(8, 8).unwrap();
        g.set(2, 3, 1.0);
        let s = summarize_heatmap(&heat(g), SummaryParams::new(0.5, 3).unwrap());
        assert_eq!(s.regions.len(), 1);
        let r = &s.regions[0];
        assert_eq!(r.centroid, (2.0, 3.0));
        assert_eq!(r.cells, 1);
        assert_eq!(r.area_fraction, 1.0 / 64.0);
        assert_eq!(s.text, "1 salient region; strongest at (2,3) covering 1.6% of frame");
    }

    #[test]
    fn diagonal_cells_are_separate_regions() {
        let mut g = Grid::zeros(3, 3).unwrap();
        g.set(0, 0, 1.0);
        g.set(1, 1, 1.0);
        let s = summarize_heatmap(&heat(g), SummaryParams::default());
        assert_eq!(s.total_regions, 2);
    }

    #[test]
    fn equal_means_order_by_centroid() {
        let mut g = Grid::zeros(5, 5).unwrap();
        g.set(4, 0, 1.0);
        g.set(0, 4, 1.0);
        g.set(0, 0, 1.0);
        let s = summarize_heatmap(&heat(g), SummaryParams::default());
        let centroids: Vec<_> = s.regions.iter().map(|r| r.centroid).collect();
        assert_eq!(centroids, vec![(0.0, 0.0), (0.0, 4.0), (4.0, 0.0)]);
        assert_eq!(s.text, "3 salient regions; strongest at (0,0) covering 4.0% of frame");
    }

    #[test]
    fn truncates_to_max_regions() {
        let g = Grid::from_fn(6, 6, |r, c| if (r + c) % 2 == 0 { 1.0 } else { 0.0 }).unwrap();
        let s = summarize_heatmap(&heat(g), SummaryParams::new(0.5, 2).unwrap());
        assert_eq!(s.regions.len(), 2);
        assert_eq!(s.total_regions, 18);
    }

    #[test]
    fn params_validated() {
        assert!(SummaryParams::new(0.0, 3).is_err());
        assert!(SummaryParams::new(1.5, 3).is_err());
        assert!(SummaryParams::new(f64::NAN, 3).is_err());
        assert!(SummaryParams::new(1.0, 0).is_err());
        assert!(SummaryParams::new(1.0, 1).is_ok());
        assert!(serde_json::from_str::<SummaryParams>(r#"{"activation_threshold":2.0,"max_regions":1}"#).is_err());
    }
}
