//! KITTI label text: one object per line,
//! `type trunc occ alpha x1 y1 x2 y2 h w l x y z ry [score [iou_score]]`,
//! where `(x, y, z)` is the bottom center of the box.

use std::fmt::Write as _;
use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::classes::ClassTable;
use crate::error::{Error, Location, Result};
use crate::geometry::{normalize_yaw, Box3D, Detection};

/// Frame in which label locations are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelFrame {
    /// Locations already in the LiDAR frame; `ry` is the LiDAR yaw.
    #[default]
    Lidar,
    /// KITTI camera convention with a rigid camera-to-LiDAR transform given
    /// as a row-major 3x4 `[R | t]`.
    Camera { cam_to_lidar: [[f64; 4]; 3] },
}

fn mat_vec(m: &[[f64; 4]; 3], v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn mat_t_vec(m: &[[f64; 4]; 3], v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|c| m[0][c] * v[0] + m[1][c] * v[1] + m[2][c] * v[2])
}

impl LabelFrame {
    /// `(h, w, l, bottom xyz, ry)` into a LiDAR-frame box.
    fn to_box(self, hwl: [f64; 3], loc: [f64; 3], ry: f64) -> Result<Box3D> {
        let [h, w, l] = hwl;
        match self {
            LabelFrame::Lidar => Box3D::new(loc[0], loc[1], loc[2] + 0.5 * h, l, w, h, ry),
            LabelFrame::Camera { cam_to_lidar: m } => {
                let t = [m[0][3], m[1][3], m[2][3]];
                let bottom = mat_vec(&m, loc);
                // Camera y points down.
                let up = mat_vec(&m, [0.0, -1.0, 0.0]);
                let c: [f64; 3] = std::array::from_fn(|k| bottom[k] + t[k] + 0.5 * h * up[k]);
                let heading = mat_vec(&m, [ry.cos(), 0.0, -ry.sin()]);
                Box3D::new(c[0], c[1], c[2], l, w, h, heading[1].atan2(heading[0]))
            }
        }
    }

    /// Inverse of [`LabelFrame::to_box`]: `(bottom xyz, ry)`.
    fn box_location(self, b: &Box3D) -> ([f64; 3], f64) {
        match self {
            LabelFrame::Lidar => ([b.cx, b.cy, b.cz - 0.5 * b.h], b.yaw),
            LabelFrame::Camera { cam_to_lidar: m } => {
                let t = [m[0][3], m[1][3], m[2][3]];
                let up = mat_vec(&m, [0.0, -1.0, 0.0]);
                let bottom: [f64; 3] = std::array::from_fn(|k| b.center()[k] - 0.5 * b.h * up[k] - t[k]);
                let loc = mat_t_vec(&m, bottom);
                let heading = mat_t_vec(&m, [b.yaw.cos(), b.yaw.sin(), 0.0]);
                (loc, normalize_yaw((-heading[2]).atan2(heading[0])))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelReadStats {
    pub skipped_unknown: usize,
}

pub fn parse_labels(
    text: &str,
    table: &ClassTable,
    frame: &LabelFrame,
    path: &Path,
) -> Result<(Vec<Detection>, LabelReadStats)> {
    let mut stats = LabelReadStats::default();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(path, Location::Line(lineno), msg);
        if !(15..=17).contains(&fields.len()) {
            return Err(bad(format!("expected 15 to 17 fields, found {}", fields.len())));
        }
        let Some(class) = table.by_name(fields[0]) else {
            debug!("{}:{lineno}: skipping unknown type `{}`", path.display(), fields[0]);
            stats.skipped_unknown += 1;
            continue;
        };
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| bad(format!("field {} (`{}`) is not a number", k + 1, fields[k])))
        };
        // Validate the 2-D columns even though they are not used.
        for k in 1..8 {
            num(k)?;
        }
        let hwl = [num(8)?, num(9)?, num(10)?];
        let loc = [num(11)?, num(12)?, num(13)?];
        let ry = num(14)?;
        let cls_score = if fields.len() > 15 { num(15)? } else { 1.0 };
        let iou_score = if fields.len() > 16 { num(16)? } else { cls_score };
        let bbox = frame.to_box(hwl, loc, ry).map_err(|e| bad(e.to_string()))?;
        let det = Detection { bbox, class_id: class.id, cls_score, iou_score, teacher_id: None };
        det.validate().map_err(|e| bad(e.to_string()))?;
        out.push(det);
    }
    Ok((out, stats))
}

pub fn read_labels(path: &Path, table: &ClassTable, frame: &LabelFrame) -> Result<(Vec<Detection>, LabelReadStats)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, table, frame, path)
}

/// Ground truth (both scores 1) is written with 15 fields; otherwise the
/// classification score and, when it differs, the IoU score are appended.
pub fn format_labels(dets: &[Detection], table: &ClassTable, frame: &LabelFrame) -> Result<String> {
    let mut s = String::new();
    for d in dets {
        let class = table
            .by_id(d.class_id)
            .ok_or_else(|| Error::InvalidArgument(format!("class id {} not in class table", d.class_id)))?;
        let (loc, ry) = frame.box_location(&d.bbox);
        let b = &d.bbox;
        write!(
            s,
            "{} 0.00 0 -10 0.00 0.00 0.00 0.00 {} {} {} {} {} {} {}",
            class.name, b.h, b.w, b.l, loc[0], loc[1], loc[2], ry
        )
        .unwrap();
        if d.cls_score != 1.0 || d.iou_score != 1.0 {
            write!(s, " {}", d.cls_score).unwrap();
            if d.iou_score != d.cls_score {
                write!(s, " {}", d.iou_score).unwrap();
            }
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_labels(path: &Path, dets: &[Detection], table: &ClassTable, frame: &LabelFrame) -> Result<()> {
    write_atomic(path, format_labels(dets, table, frame)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const LINE: &str = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

    /// Standard KITTI rectified-camera to velodyne axes (no offset).
    fn kitti_axes() -> LabelFrame {
        LabelFrame::Camera {
            cam_to_lidar: [[0.0, 0.0, 1.0, 0.27], [-1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, -0.08]],
        }
    }

    fn p() -> &'static Path {
        Path::new("labels.txt")
    }

    #[test]
    fn empty_text_gives_no_labels() {
        let (d, s) = parse_labels("", &ClassTable::kitti(), &LabelFrame::Lidar, p()).unwrap();
        assert!(d.is_empty());
        assert_eq!(s.skipped_unknown, 0);
    }

    #[test]
    fn dont_care_is_skipped() {
        let text = format!("DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n{LINE}\n");
        let (d, s) = parse_labels(&text, &ClassTable::kitti(), &LabelFrame::Lidar, p()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(s.skipped_unknown, 1);
    }

    #[test]
    fn lidar_frame_lifts_bottom_center() {
        let (d, _) = parse_labels(LINE, &ClassTable::kitti(), &LabelFrame::Lidar, p()).unwrap();
        let b = d[0].bbox;
        assert_eq!((b.l, b.w, b.h), (3.64, 1.67, 1.65));
        assert!((b.cz - (46.70 + 0.825)).abs() < 1e-12);
        assert_eq!(d[0].cls_score, 1.0);
    }

    #[test]
    fn camera_frame_matches_standard_conversion() {
        let (d, _) = parse_labels(LINE, &ClassTable::kitti(), &kitti_axes(), p()).unwrap();
        let b = d[0].bbox;
        // x_lidar = z_cam + 0.27, y_lidar = -x_cam, z_lidar = -y_cam - 0.08 + h/2
        assert!((b.cx - (46.70 + 0.27)).abs() < 1e-9);
        assert!((b.cy - 0.65).abs() < 1e-9);
        assert!((b.cz - (-1.71 - 0.08 + 0.825)).abs() < 1e-9);
        assert!((b.yaw - normalize_yaw(1.59 - PI / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{LINE}\nCar 0 0 0 0 0 0 0 1 1 x 0 0 0 0\n");
        let err = parse_labels(&text, &ClassTable::kitti(), &LabelFrame::Lidar, p()).unwrap_err();
        assert!(matches!(err, Error::Format { location: Location::Line(2), .. }), "{err}");
        let err = parse_labels("Car 1 2 3", &ClassTable::kitti(), &LabelFrame::Lidar, p()).unwrap_err();
        assert!(matches!(err, Error::Format { location: Location::Line(1), .. }));
        let err = parse_labels("Car 0 0 0 0 0 0 0 1 0 1 0 0 0 0", &ClassTable::kitti(), &LabelFrame::Lidar, p()).unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");
    }

    #[test]
    fn scores_survive_round_trip() {
        let d = Detection {
            bbox: Box3D::new(10.0, -2.0, -0.7, 4.0, 1.8, 1.5, 0.3).unwrap(),
            class_id: 3,
            cls_score: 0.75,
            iou_score: 0.5,
            teacher_id: None,
        };
        let text = format_labels(&[d], &ClassTable::kitti(), &LabelFrame::Lidar).unwrap();
        assert!(text.starts_with("Cyclist "));
        let (back, _) = parse_labels(&text, &ClassTable::kitti(), &LabelFrame::Lidar, p()).unwrap();
        assert_eq!((back[0].cls_score, back[0].iou_score), (0.75, 0.5));
    }

    #[test]
    fn unknown_class_id_cannot_be_written() {
        let d = Detection::ground_truth(Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap(), 9);
        assert!(format_labels(&[d], &ClassTable::kitti(), &LabelFrame::Lidar).is_err());
    }

    proptest! {
        #[test]
        fn boxes_round_trip_within_tolerance(
            v in (-70.0f64..70.0, -40.0f64..40.0, -3.0f64..1.0, 0.2f64..12.0, 0.2f64..4.0, 0.2f64..4.0, -PI..PI),
            class_id in 1u32..=3,
            camera in any::<bool>(),
        ) {
            let frame = if camera { kitti_axes() } else { LabelFrame::Lidar };
            let d = Detection::ground_truth(Box3D::new(v.0, v.1, v.2, v.3, v.4, v.5, v.6).unwrap(), class_id);
            let text = format_labels(&[d], &ClassTable::kitti(), &frame).unwrap();
            let (back, _) = parse_labels(&text, &ClassTable::kitti(), &frame, p()).unwrap();
            let (a, b) = (d.bbox.to_array(), back[0].bbox.to_array());
            for k in 0..6 {
                prop_assert!((a[k] - b[k]).abs() < 1e-6, "{:?} vs {:?}", a, b);
            }
            prop_assert!(normalize_yaw(a[6] - b[6]).abs() < 1e-6);
            prop_assert_eq!(back[0].class_id, class_id);
        }
    }
}
