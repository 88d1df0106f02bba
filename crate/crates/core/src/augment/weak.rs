use std::f64::consts::{FRAC_PI_4, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_yaw, Box3D, Detection, Point, PointCloud};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakAugConfig {
    pub flip_x_prob: f64,
    pub flip_y_prob: f64,
    /// Uniform yaw range in radians.
    pub rot_range: [f64; 2],
    pub scale_range: [f64; 2],
}

impl Default for WeakAugConfig {
    fn default() -> Self {
        WeakAugConfig {
            flip_x_prob: 0.5,
            flip_y_prob: 0.5,
            rot_range: [-FRAC_PI_4, FRAC_PI_4],
            scale_range: [0.95, 1.05],
        }
    }
}

impl WeakAugConfig {
    /// A configuration whose every draw is the identity.
    pub fn identity() -> Self {
        WeakAugConfig {
            flip_x_prob: 0.0,
            flip_y_prob: 0.0,
            rot_range: [0.0, 0.0],
            scale_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.flip_x_prob, self.flip_y_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("flip probability {p} outside [0, 1]")));
            }
        }
        let [r0, r1] = self.rot_range;
        let [s0, s1] = self.scale_range;
        if !(r0 <= r1) || !(s0 <= s1) || !(s0 > 0.0) {
            return Err(Error::Config(format!(
                "weak augmentation ranges must be ordered with positive scale: rot {:?} scale {:?}",
                self.rot_range, self.scale_range
            )));
        }
        Ok(())
    }
}

/// The exact transform applied by one weak-augmentation draw.
///
/// Applied in order: flip across the x axis (y -> -y), flip across the
/// y axis (x -> -x), rotation about +z, uniform scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakAugRecord {
    pub flip_x: bool,
    pub flip_y: bool,
    pub rot_z: f64,
    pub scale: f64,
}

impl WeakAugRecord {
    pub const IDENTITY: WeakAugRecord = WeakAugRecord {
        flip_x: false,
        flip_y: false,
        rot_z: 0.0,
        scale: 1.0,
    };

    pub fn draw(config: &WeakAugConfig, rng: &mut impl Rng) -> Self {
        let flip_x = rng.random_bool(config.flip_x_prob);
        let flip_y = rng.random_bool(config.flip_y_prob);
        let rot_z = rng.random_range(config.rot_range[0]..=config.rot_range[1]);
        let scale = rng.random_range(config.scale_range[0]..=config.scale_range[1]);
        WeakAugRecord { flip_x, flip_y, rot_z, scale }
    }

    fn forward_xyz(&self, mut p: [f64; 3]) -> [f64; 3] {
        if self.flip_x {
            p[1] = -p[1];
        }
        if self.flip_y {
            p[0] = -p[0];
        }
        let (s, c) = self.rot_z.sin_cos();
        let (x, y) = (c * p[0] - s * p[1], s * p[0] + c * p[1]);
        [x * self.scale, y * self.scale, p[2] * self.scale]
    }

    fn inverse_xyz(&self, p: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = p.map(|v| v / self.scale);
        let (s, c) = self.rot_z.sin_cos();
        let mut q = [c * x + s * y, -s * x + c * y, z];
        if self.flip_y {
            q[0] = -q[0];
        }
        if self.flip_x {
            q[1] = -q[1];
        }
        q
    }

    fn forward_yaw(&self, mut yaw: f64) -> f64 {
        if self.flip_x {
            yaw = -yaw;
        }
        if self.flip_y {
            yaw = PI - yaw;
        }
        normalize_yaw(yaw + self.rot_z)
    }

    fn inverse_yaw(&self, yaw: f64) -> f64 {
        let mut yaw = yaw - self.rot_z;
        if self.flip_y {
            yaw = PI - yaw;
        }
        if self.flip_x {
            yaw = -yaw;
        }
        normalize_yaw(yaw)
    }

    fn map_points(points: &[Point], f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<Point> {
        points
            .iter()
            .map(|p| {
                let [x, y, z] = f(p.xyz());
                Point { x: x as f32, y: y as f32, z: z as f32, intensity: p.intensity }
            })
            .collect()
    }

    pub fn apply_points(&self, points: &[Point]) -> Vec<Point> {
        Self::map_points(points, |p| self.forward_xyz(p))
    }

    pub fn undo_points(&self, points: &[Point]) -> Vec<Point> {
        Self::map_points(points, |p| self.inverse_xyz(p))
    }

    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        let [cx, cy, cz] = self.forward_xyz(b.center());
        Box3D {
            cx,
            cy,
            cz,
            l: b.l * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
            yaw: self.forward_yaw(b.yaw),
        }
    }

    pub fn undo_box(&self, b: &Box3D) -> Box3D {
        let [cx, cy, cz] = self.inverse_xyz(b.center());
        Box3D {
            cx,
            cy,
            cz,
            l: b.l / self.scale,
            w: b.w / self.scale,
            h: b.h / self.scale,
            yaw: self.inverse_yaw(b.yaw),
        }
    }

    pub fn apply(&self, cloud: &PointCloud, labels: &[Detection]) -> (PointCloud, Vec<Detection>) {
        let points = self.apply_points(&cloud.points);
        let labels = labels
            .iter()
            .map(|d| Detection { bbox: self.apply_box(&d.bbox), ..*d })
            .collect();
        (PointCloud::new(cloud.frame_id.clone(), points), labels)
    }
}

/// Random flip / rotation / scaling of a frame, applied jointly to points
/// and boxes. The same seed always yields the same record.
pub fn weak_augment(
    cloud: &PointCloud,
    labels: &[Detection],
    config: &WeakAugConfig,
    seed: u64,
) -> (PointCloud, Vec<Detection>, WeakAugRecord) {
    let mut rng = rng::stream(seed, &[0x5745_414b]);
    let record = WeakAugRecord::draw(config, &mut rng);
    let (cloud, labels) = record.apply(cloud, labels);
    (cloud, labels, record)
}
