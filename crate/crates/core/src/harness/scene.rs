use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{normal, poisson};
use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, Box3D, Detection, Point, PointCloud};
use crate::io::{FrameBundle, PointRange};
use crate::rng;

const LABEL_STREAM: u64 = 0x5343_454e;
const POINT_STREAM: u64 = 0x504f_494e;
const PLACEMENT_TRIES: usize = 50;

/// Placement and appearance of one class in synthetic scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPrior {
    pub class_id: u32,
    /// Objects per scene, uniform over the inclusive range.
    pub count: [usize; 2],
    /// `(l, w, h)` in meters.
    pub size_mean: [f64; 3],
    pub size_std: [f64; 3],
    /// Center distance from the sensor, uniform over `[min, max]`.
    pub radius: [f64; 2],
    /// Expected points per square meter of footprint at 10 m.
    pub density_10m: f64,
    /// Density scales with `(10 / r)^falloff`.
    pub falloff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenePrior {
    pub classes: Vec<ClassPrior>,
    /// Height of the ground plane in the sensor frame.
    pub ground_z: f64,
    pub ground_points: usize,
}

impl Default for ScenePrior {
    fn default() -> Self {
        let class = |class_id, count, size_mean, size_std, radius| ClassPrior {
            class_id,
            count,
            size_mean,
            size_std,
            radius,
            density_10m: 40.0,
            falloff: 2.0,
        };
        ScenePrior {
            classes: vec![
                class(1, [4, 10], [3.9, 1.6, 1.56], [0.3, 0.1, 0.1], [5.0, 45.0]),
                class(2, [1, 5], [0.8, 0.6, 1.73], [0.1, 0.05, 0.1], [4.0, 30.0]),
                class(3, [0, 3], [1.76, 0.6, 1.73], [0.15, 0.05, 0.1], [4.0, 35.0]),
            ],
            ground_z: -1.73,
            ground_points: 2000,
        }
    }
}

impl ScenePrior {
    pub fn validate(&self) -> Result<()> {
        for c in &self.classes {
            let bad = |what: &str| Err(Error::Config(format!("scene prior for class {}: {what}", c.class_id)));
            if c.count[0] > c.count[1] {
                return bad("count range is reversed");
            }
            if !(c.size_mean.iter().all(|&s| s > 0.0) && c.size_std.iter().all(|&s| s >= 0.0)) {
                return bad("sizes must be positive and stds non-negative");
            }
            if !(0.0 <= c.radius[0] && c.radius[0] <= c.radius[1] && c.radius[1].is_finite()) {
                return bad("radius range must satisfy 0 <= min <= max");
            }
            if !(c.density_10m > 0.0 && c.density_10m.is_finite()) {
                return bad("density must be positive");
            }
            if !(c.falloff >= 0.0 && c.falloff.is_finite()) {
                return bad("falloff must be non-negative");
            }
        }
        Ok(())
    }

    /// Checks every annulus reaches into the crop volume.
    pub fn validate_range(&self, range: &PointRange) -> Result<()> {
        let reach = range.min[0].abs().max(range.max[0].abs()).hypot(range.min[1].abs().max(range.max[1].abs()));
        for c in &self.classes {
            if c.radius[1] > reach {
                return Err(Error::Config(format!(
                    "scene prior for class {}: radius {} exceeds the crop range reach {reach:.1}",
                    c.class_id, c.radius[1]
                )));
            }
        }
        Ok(())
    }
}

fn footprint_in_range(b: &Box3D, range: &PointRange) -> bool {
    b.bev_corners()
        .iter()
        .all(|c| range.min[0] <= c[0] && c[0] <= range.max[0] && range.min[1] <= c[1] && c[1] <= range.max[1])
        && range.min[2] <= b.z_min()
        && b.z_max() <= range.max[2]
}

/// Ground-truth boxes for one scene: footprints inside the range and
/// pairwise disjoint in BEV. Objects that cannot be placed are skipped.
pub fn gen_labels(prior: &ScenePrior, range: &PointRange, seed: u64) -> Vec<Detection> {
    let mut rng = rng::stream(seed, &[LABEL_STREAM]);
    let mut labels: Vec<Detection> = Vec::new();
    for c in &prior.classes {
        let n = rng.random_range(c.count[0]..=c.count[1]);
        for _ in 0..n {
            for _ in 0..PLACEMENT_TRIES {
                let size: [f64; 3] = std::array::from_fn(|k| (c.size_mean[k] + normal(&mut rng, c.size_std[k])).max(0.3 * c.size_mean[k]));
                let r = rng.random_range(c.radius[0]..=c.radius[1]);
                let theta = rng.random_range(-PI..PI);
                let yaw = rng.random_range(-PI..PI);
                let cz = prior.ground_z + 0.5 * size[2];
                let Ok(b) = Box3D::new(r * theta.cos(), r * theta.sin(), cz, size[0], size[1], size[2], yaw) else {
                    continue;
                };
                if footprint_in_range(&b, range) && labels.iter().all(|o| bev_intersection_area(&o.bbox, &b) == 0.0) {
                    labels.push(Detection::ground_truth(b, c.class_id));
                    break;
                }
            }
        }
    }
    labels
}

/// Expected object point count at its distance.
pub fn expected_points(c: &ClassPrior, b: &Box3D) -> f64 {
    let r = b.cx.hypot(b.cy).max(1.0);
    c.density_10m * (10.0 / r).powf(c.falloff) * b.l * b.w
}

/// Object points drawn uniformly inside each box, Poisson-distributed in
/// number, followed by ground points just below the boxes.
pub fn gen_points(prior: &ScenePrior, range: &PointRange, labels: &[Detection], seed: u64) -> Vec<Point> {
    let mut rng = rng::stream(seed, &[POINT_STREAM]);
    let mut points = Vec::new();
    for d in labels {
        let Some(c) = prior.classes.iter().find(|c| c.class_id == d.class_id) else {
            continue;
        };
        let b = &d.bbox;
        let n = poisson(&mut rng, expected_points(c, b));
        for _ in 0..n {
            let local = [
                rng.random_range(-0.5..=0.5) * b.l,
                rng.random_range(-0.5..=0.5) * b.w,
                rng.random_range(-0.5..=0.5) * b.h,
            ];
            let w = b.to_world(local);
            let p = Point::new(w[0] as f32, w[1] as f32, w[2] as f32, rng.random::<f32>());
            // f32 rounding can push a face point out by an ulp.
            if b.contains(p.xyz()) {
                points.push(p);
            }
        }
    }
    let gz = (prior.ground_z - 0.05).max(range.min[2]);
    let span = |k: usize| (range.min[k].max(-80.0), range.max[k].min(80.0));
    let (x0, x1) = span(0);
    let (y0, y1) = span(1);
    for _ in 0..prior.ground_points {
        let x = rng.random_range(x0..=x1);
        let y = rng.random_range(y0..=y1);
        points.push(Point::new(x as f32, y as f32, gz as f32, rng.random::<f32>() * 0.2));
    }
    points
}

/// A synthetic frame: labels, then points, from independent streams.
pub fn gen_scene(prior: &ScenePrior, range: &PointRange, frame_id: &str, seed: u64) -> FrameBundle {
    let labels = gen_labels(prior, range, seed);
    let points = gen_points(prior, range, &labels, seed);
    FrameBundle {
        frame_id: frame_id.to_owned(),
        cloud: PointCloud::new(frame_id, points),
        labels: Some(labels),
    }
}
