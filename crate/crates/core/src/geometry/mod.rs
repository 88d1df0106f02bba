//! Oriented boxes, point sets, and the primitives built on them: frame
//! transforms, closed-box containment, rotated IoU and greedy NMS.
//!
//! Boxes live in the LiDAR frame (x forward, y left, z up) and carry a yaw
//! about +z measured counter-clockwise from +x. All box math runs in `f64`;
//! point coordinates are stored as `f32` to match on-disk formats.

mod iou;
mod nms;

pub use iou::{bev_iou, bev_intersection_area, iou_3d, AREA_EPSILON};
pub use nms::{nms, nms_indices, NmsConfig, NmsMetric};

use crate::error::{Error, Result};

use std::f64::consts::PI;

/// A single LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    /// Builds a point, clamping intensity into `[0, 1]`.
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point {
            x,
            y,
            z,
            intensity: clamp_intensity(intensity),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

pub(crate) fn clamp_intensity(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point>) -> Self {
        PointCloud {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let wrapped = yaw.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Oriented 3-D bounding box. `l` runs along the heading, `w` across it,
/// `h` along +z. Sizes are full extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    /// Validating constructor; yaw is normalized into `(-pi, pi]`.
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        let b = Box3D {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: normalize_yaw(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.to_array();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("box has non-finite field: {all:?}")));
        }
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box sizes must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    /// Radius of the footprint's circumscribed circle.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.l.hypot(self.w)
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.h
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.h
    }

    /// World coordinates into the box frame (centered, heading along +x).
    #[inline]
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.cz]
    }

    #[inline]
    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            c * p[0] - s * p[1] + self.cx,
            s * p[0] + c * p[1] + self.cy,
            p[2] + self.cz,
        ]
    }

    /// Closed containment: points exactly on a face count as inside.
    #[inline]
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let local = self.to_local(p);
        local_inside(local, [0.5 * self.l, 0.5 * self.w, 0.5 * self.h])
    }

    /// Footprint containment, ignoring z.
    #[inline]
    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        let local = self.to_local([x, y, self.cz]);
        local[0].abs() <= 0.5 * self.l && local[1].abs() <= 0.5 * self.w
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| {
            let w = self.to_world([x, y, 0.0]);
            [w[0], w[1]]
        })
    }
}

#[inline]
fn local_inside(local: [f64; 3], half: [f64; 3]) -> bool {
    local[0].abs() <= half[0] && local[1].abs() <= half[1] && local[2].abs() <= half[2]
}

/// A scored, classified box. `iou_score` carries the second-stage IoU
/// estimate; ground truth has both scores at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub class_id: u32,
    pub cls_score: f64,
    pub iou_score: f64,
    pub teacher_id: Option<u32>,
}

impl Detection {
    pub fn ground_truth(bbox: Box3D, class_id: u32) -> Self {
        Detection {
            bbox,
            class_id,
            cls_score: 1.0,
            iou_score: 1.0,
            teacher_id: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if self.class_id == 0 {
            return Err(Error::InvalidArgument("class_id must be >= 1".into()));
        }
        for (name, s) in [("cls_score", self.cls_score), ("iou_score", self.iou_score)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidArgument(format!("{name} {s} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Indices of the points inside `bbox`, in cloud order.
pub fn indices_in_box(points: &[Point], bbox: &Box3D) -> Vec<usize> {
    let (s, c) = bbox.yaw.sin_cos();
    let half = [0.5 * bbox.l, 0.5 * bbox.w, 0.5 * bbox.h];
    // Cheap reject on the circumscribed circle before rotating.
    let r = bbox.bev_radius();
    points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let dx = p.x as f64 - bbox.cx;
            let dy = p.y as f64 - bbox.cy;
            if dx.abs() > r || dy.abs() > r {
                return None;
            }
            let local = [c * dx + s * dy, -s * dx + c * dy, p.z as f64 - bbox.cz];
            local_inside(local, half).then_some(i)
        })
        .collect()
}

/// The points of `cloud` inside `bbox` (closed box), order preserved.
pub fn points_in_box(cloud: &PointCloud, bbox: &Box3D) -> PointCloud {
    let points = indices_in_box(&cloud.points, bbox)
        .into_iter()
        .map(|i| cloud.points[i])
        .collect();
    PointCloud::new(cloud.frame_id.clone(), points)
}

/// Per-axis scale, then rotation about +z, then translation.
pub fn transform_points(
    points: &[Point],
    scale: [f64; 3],
    rot_z: f64,
    translate: [f64; 3],
) -> Result<Vec<Point>> {
    if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale factors must be positive, got {scale:?}"
        )));
    }
    let (s, c) = rot_z.sin_cos();
    Ok(points
        .iter()
        .map(|p| {
            let x = p.x as f64 * scale[0];
            let y = p.y as f64 * scale[1];
            let z = p.z as f64 * scale[2];
            Point {
                x: (c * x - s * y + translate[0]) as f32,
                y: (s * x + c * y + translate[1]) as f32,
                z: (z + translate[2]) as f32,
                intensity: p.intensity,
            }
        })
        .collect())
}
