//! External formats: KITTI-style point clouds and label text, detection-set
//! files, the pipeline config, and dataset directory walking.

mod cloud;
mod config;
mod detset;
mod labels;

pub use cloud::{decode_cloud, encode_cloud, read_cloud, write_cloud, CloudReadStats};
pub use config::{EmaSettings, EvalSettings, PipelineConfig, ThresholdSettings};
pub use detset::{load_teacher_dets, pseudo_label_set, DetectionRecord, DetectionSet, SCHEMA as DETSET_SCHEMA};
pub use labels::{format_labels, parse_labels, read_labels, write_labels, LabelFrame, LabelReadStats};

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Detection, PointCloud};

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().and_then(|e| e.to_str()) == Some(extension) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A frame's cloud with optional labels (ground truth carries unit scores).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub frame_id: String,
    pub cloud: PointCloud,
    pub labels: Option<Vec<Detection>>,
}

/// Axis-aligned crop volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct PointRange {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PointRange {
    /// Bounds in `[x_min, y_min, x_max, y_max, z_min, z_max]` order.
    pub fn from_bounds(b: [f64; 6]) -> Result<Self> {
        let r = PointRange { min: [b[0], b[1], b[4]], max: [b[2], b[3], b[5]] };
        if (0..3).any(|k| !(r.min[k] <= r.max[k])) {
            return Err(Error::Config(format!("point range {b:?} is not well ordered")));
        }
        Ok(r)
    }

    pub fn unbounded() -> Self {
        PointRange { min: [f64::NEG_INFINITY; 3], max: [f64::INFINITY; 3] }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }
}

impl Default for PointRange {
    fn default() -> Self {
        PointRange::from_bounds([0.0, -40.0, 70.4, 40.0, -3.0, 1.0]).expect("static range")
    }
}

impl TryFrom<[f64; 6]> for PointRange {
    type Error = Error;

    fn try_from(b: [f64; 6]) -> Result<Self> {
        PointRange::from_bounds(b)
    }
}

impl From<PointRange> for [f64; 6] {
    fn from(r: PointRange) -> Self {
        [r.min[0], r.min[1], r.max[0], r.max[1], r.min[2], r.max[2]]
    }
}

/// Drops points outside `range` and labels whose centers fall outside it.
pub fn crop_to_range(cloud: &PointCloud, labels: &[Detection], range: &PointRange) -> (PointCloud, Vec<Detection>) {
    let points = cloud.points.iter().filter(|p| range.contains(p.xyz())).copied().collect();
    let labels = labels.iter().filter(|d| range.contains(d.bbox.center())).copied().collect();
    (PointCloud::new(cloud.frame_id.clone(), points), labels)
}
