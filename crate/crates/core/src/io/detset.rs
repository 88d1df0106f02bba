//! Detection-set files (`mpgen/1`): one JSON document per frame.
//!
//! ```json
//! {"schema": "mpgen/1", "frame_id": "000001", "category": "vehicle",
//!  "detections": [{"class_id": 1, "box": [cx, cy, cz, l, w, h, yaw],
//!                  "cls_score": 0.9, "iou_score": 0.8, "teacher_id": 0}]}
//! ```
//!
//! `category` is optional and names the producing teacher's specialty.
//! Pseudo-label sets may flag records with `"ambiguous": true`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::classes::Category;
use crate::error::{Error, Location, Result};
use crate::fusion::{PseudoLabel, TeacherOutput};
use crate::geometry::{Box3D, Detection};

pub const SCHEMA: &str = "mpgen/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub cls_score: f64,
    pub iou_score: f64,
    #[serde(default)]
    pub teacher_id: Option<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ambiguous: bool,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection, ambiguous: bool) -> Self {
        DetectionRecord {
            class_id: d.class_id,
            bbox: d.bbox.to_array(),
            cls_score: d.cls_score,
            iou_score: d.iou_score,
            teacher_id: d.teacher_id,
            ambiguous,
        }
    }

    pub fn to_detection(&self) -> Result<Detection> {
        let d = Detection {
            bbox: Box3D::from_array(self.bbox)?,
            class_id: self.class_id,
            cls_score: self.cls_score,
            iou_score: self.iou_score,
            teacher_id: self.teacher_id,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSet {
    pub schema: String,
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionSet {
    pub fn new(frame_id: impl Into<String>, category: Option<Category>, detections: Vec<DetectionRecord>) -> Self {
        DetectionSet { schema: SCHEMA.to_owned(), frame_id: frame_id.into(), category, detections }
    }

    pub fn from_detections(frame_id: impl Into<String>, category: Option<Category>, dets: &[Detection]) -> Self {
        DetectionSet::new(
            frame_id,
            category,
            dets.iter().map(|d| DetectionRecord::from_detection(d, false)).collect(),
        )
    }

    pub fn detections(&self) -> Result<Vec<Detection>> {
        self.detections.iter().map(DetectionRecord::to_detection).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let set: DetectionSet = serde_json::from_str(text)
            .map_err(|e| Error::format(path, Location::Line(e.line()), e.to_string()))?;
        if set.schema != SCHEMA {
            return Err(Error::format(
                path,
                Location::Whole,
                format!("unsupported schema `{}` (expected `{SCHEMA}`)", set.schema),
            ));
        }
        for (i, r) in set.detections.iter().enumerate() {
            r.to_detection()
                .map_err(|e| Error::format(path, Location::Whole, format!("detection {i}: {e}")))?;
        }
        Ok(set)
    }

    /// Pretty JSON with a trailing newline; stable for identical input.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("detection sets always serialize");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DetectionSet::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// Fused labels of one frame as a detection set, ambiguous ones flagged.
pub fn pseudo_label_set(frame_id: &str, labels: &[PseudoLabel]) -> DetectionSet {
    DetectionSet::new(
        frame_id,
        None,
        labels.iter().map(|l| DetectionRecord::from_detection(&l.detection, l.ambiguous)).collect(),
    )
}

/// Teacher id from a `teacher_<k>` directory name.
fn teacher_id(dir: &Path) -> Result<u32> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_prefix("teacher_")
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("{}: expected a `teacher_<k>` directory", dir.display())))
}

/// Teacher outputs per frame, frames in sorted id order. Every detection set
/// must name its category; a teacher missing a frame contributes nothing
/// to it.
pub fn load_teacher_dets(dets: &Path) -> Result<(Vec<String>, Vec<Vec<TeacherOutput>>)> {
    let rd = std::fs::read_dir(dets).map_err(|e| Error::io(dets, e))?;
    let mut dirs = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dets, e))?.path();
        if p.is_dir() {
            dirs.push((teacher_id(&p)?, p));
        }
    }
    dirs.sort();
    let mut per_frame: BTreeMap<String, Vec<TeacherOutput>> = BTreeMap::new();
    for (tid, dir) in &dirs {
        let mut category: Option<Category> = None;
        for path in super::list_files(dir, "json")? {
            let set = DetectionSet::read(&path)?;
            let cat = set.category.ok_or_else(|| {
                Error::Config(format!("{}: teacher detection sets must declare a category", path.display()))
            })?;
            if category.is_some_and(|c| c != cat) {
                return Err(Error::Config(format!("{}: teacher {tid} switches category", path.display())));
            }
            category = Some(cat);
            let detections = set
                .detections()
                .map_err(|e| Error::format(&path, Location::Whole, e.to_string()))?;
            per_frame
                .entry(set.frame_id.clone())
                .or_default()
                .push(TeacherOutput { teacher_id: *tid, category: cat, detections });
        }
    }
    Ok(per_frame.into_iter().unzip())
}
