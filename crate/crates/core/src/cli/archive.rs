//! Per-anomaly artifact archive: frame JSON, plain PGM heatmap and report.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::report::canonical_json;
use super::CliError;
use crate::bus::{archive_prefix, ArchiveEntry, Archiver, BusError};
use crate::saliency::Heatmap;
use crate::world::{AnomalyRecord, Grid, WorldFrame};

/// Plain (P2) PGM, max-normalized to 0..=255. The original maximum is kept
/// in a `# max=` comment so the grid can be denormalized.
pub fn write_pgm(grid: &Grid) -> String {
    let max = grid.max();
    let mut out = format!("P2\n# max={max:?}\n{} {}\n255\n", grid.cols(), grid.rows());
    for r in 0..grid.rows() {
        let row: Vec<String> = (0..grid.cols())
            .map(|c| {
                let v = if max > 0.0 {
                    (grid.get(r, c) / max * 255.0).round()
                } else {
                    0.0
                };
                (v.clamp(0.0, 255.0) as u8).to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a plain PGM written by [`write_pgm`] back into activations.
pub fn read_pgm(text: &str) -> Result<Grid, CliError> {
    let bad = |m: &str| CliError::Validation(format!("bad PGM: {m}"));
    let mut max = None;
    let mut tokens = Vec::new();
    for line in text.lines() {
        if let Some(comment) = line.trim().strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("max=") {
                max = Some(v.trim().parse::<f64>().map_err(|_| bad("unreadable max comment"))?);
            }
            continue;
        }
        tokens.extend(line.split_whitespace());
    }
    let mut it = tokens.into_iter();
    if it.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num =
        |what: &str| -> Result<usize, CliError> { it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(what)) };
    let cols = num("width")?;
    let rows = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 {
        return Err(bad("maxval is zero"));
    }
    let scale = max.unwrap_or(maxval as f64) / maxval as f64;
    let mut cells = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        cells.push(num("pixel")? as f64 * scale);
    }
    Grid::from_fn(rows, cols, |r, c| cells[r * cols + c]).map_err(|e| bad(&e.to_string()))
}

/// Writes archive triples under a directory, keeping prefixes unique.
#[derive(Debug)]
pub struct DirArchiver {
    dir: PathBuf,
    used: BTreeSet<String>,
}

impl DirArchiver {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            used: BTreeSet::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the three files and returns their paths.
    pub fn write(
        &mut self,
        record: &AnomalyRecord,
        heatmap: &Heatmap,
        frame: &WorldFrame,
        at: f64,
    ) -> Result<Vec<PathBuf>, CliError> {
        let base = archive_prefix(at, frame.frame_id);
        let prefix = (0..)
            .map(|n| if n == 0 { base.clone() } else { format!("{base}-{n}") })
            .find(|p| !self.used.contains(p) && !self.dir.join(format!("{p}.report.json")).exists())
            .expect("unbounded suffixes");
        self.used.insert(prefix.clone());
        let files = [
            (format!("{prefix}.frame.json"), canonical_json(frame)),
            (format!("{prefix}.heatmap.pgm"), write_pgm(&heatmap.grid)),
            (format!("{prefix}.report.json"), canonical_json(record)),
        ];
        let mut paths = Vec::with_capacity(3);
        for (name, body) in files {
            let path = self.dir.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

impl Archiver for DirArchiver {
    fn archive(
        &mut self,
        frame: &WorldFrame,
        heatmap: &Heatmap,
        record: &AnomalyRecord,
        at: f64,
    ) -> Result<ArchiveEntry, BusError> {
        let paths = self
            .write(record, heatmap, frame, at)
            .map_err(|e| BusError::Archive(e.to_string()))?;
        let files: Vec<String> = paths
            .iter()
            .map(|p| p.file_name().expect("file path").to_string_lossy().into_owned())
            .collect();
        let prefix = files[0].trim_end_matches(".frame.json").to_owned();
        Ok(ArchiveEntry { prefix, files })
    }
}

/// Archives one record into `out_dir`.
pub fn cmd_archive(
    record: &AnomalyRecord,
    heatmap: &Heatmap,
    frame: &WorldFrame,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    DirArchiver::new(out_dir)?.write(record, heatmap, frame, frame.captured_at)
}
