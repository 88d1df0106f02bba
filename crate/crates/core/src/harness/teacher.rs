use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::ClassPrior;
use super::{normal, poisson, SimContext};
use crate::classes::Category;
use crate::error::{Error, Result};
use crate::fusion::TeacherOutput;
use crate::geometry::{iou_3d, Box3D, Detection};
use crate::rng;

/// Error profile of a synthetic teacher on one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryNoise {
    /// Per-axis center jitter std, meters.
    pub center_std: f64,
    /// Per-dimension size jitter std, meters.
    pub size_std: f64,
    pub yaw_std: f64,
    /// Probability a ground-truth object is missed.
    pub fn_rate: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// Probability a detected object gets a second, extra-jittered box.
    pub dup_rate: f64,
    /// Std of the Gaussian added to the true IoU to form each score.
    pub score_std: f64,
}

impl CategoryNoise {
    pub const NONE: CategoryNoise = CategoryNoise {
        center_std: 0.0,
        size_std: 0.0,
        yaw_std: 0.0,
        fn_rate: 0.0,
        fp_rate: 0.0,
        dup_rate: 0.0,
        score_std: 0.0,
    };

    pub fn specialist() -> Self {
        CategoryNoise {
            center_std: 0.15,
            size_std: 0.03,
            yaw_std: 0.03,
            fn_rate: 0.05,
            fp_rate: 0.5,
            dup_rate: 0.3,
            score_std: 0.1,
        }
    }

    pub fn generalist() -> Self {
        CategoryNoise {
            center_std: 0.5,
            size_std: 0.1,
            yaw_std: 0.1,
            fn_rate: 0.2,
            fp_rate: 1.5,
            dup_rate: 0.3,
            score_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.center_std, self.size_std, self.yaw_std, self.score_std, self.fp_rate];
        if !stds.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(Error::Config("teacher noise stds and fp_rate must be finite and non-negative".into()));
        }
        if ![self.fn_rate, self.dup_rate].iter().all(|r| (0.0..=1.0).contains(r)) {
            return Err(Error::Config("teacher fn_rate and dup_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Noise scaled by `factor`; rates are clamped to stay probabilities.
    pub fn scaled(&self, factor: f64) -> Self {
        CategoryNoise {
            center_std: self.center_std * factor,
            size_std: self.size_std * factor,
            yaw_std: self.yaw_std * factor,
            fn_rate: (self.fn_rate * factor).clamp(0.0, 1.0),
            fp_rate: self.fp_rate * factor,
            dup_rate: self.dup_rate,
            score_std: self.score_std,
        }
    }
}

/// Per-category noise of one synthetic teacher, indexed by
/// [`Category::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherNoiseModel {
    pub per_category: [CategoryNoise; 3],
}

impl TeacherNoiseModel {
    pub fn uniform(noise: CategoryNoise) -> Self {
        TeacherNoiseModel { per_category: [noise; 3] }
    }

    /// Accurate on `specialty`, generalist-grade elsewhere.
    pub fn specialist(specialty: Category, good: CategoryNoise, poor: CategoryNoise) -> Self {
        let mut per_category = [poor; 3];
        per_category[specialty.index()] = good;
        TeacherNoiseModel { per_category }
    }

    pub fn noise(&self, category: Category) -> &CategoryNoise {
        &self.per_category[category.index()]
    }
}

fn jitter(rng: &mut ChaCha8Rng, b: &Box3D, n: &CategoryNoise, factor: f64) -> Box3D {
    let c = n.center_std * factor;
    let s = n.size_std * factor;
    let size = |rng: &mut ChaCha8Rng, v: f64| (v + normal(rng, s)).max(0.1);
    let (dx, dy, dz) = (normal(rng, c), normal(rng, c), normal(rng, c));
    let (l, w, h) = (size(rng, b.l), size(rng, b.w), size(rng, b.h));
    let yaw = b.yaw + normal(rng, n.yaw_std * factor);
    Box3D::new(b.cx + dx, b.cy + dy, b.cz + dz, l, w, h, yaw).expect("jittered box stays valid")
}

fn scored(rng: &mut ChaCha8Rng, b: Box3D, class_id: u32, iou: f64, n: &CategoryNoise, teacher_id: u32) -> Detection {
    let cls_score = (iou + normal(rng, n.score_std)).clamp(0.0, 1.0);
    let iou_score = (iou + normal(rng, n.score_std)).clamp(0.0, 1.0);
    Detection { bbox: b, class_id, cls_score, iou_score, teacher_id: Some(teacher_id) }
}

fn best_iou(b: &Box3D, gts: &[&Detection], class_id: u32) -> f64 {
    gts.iter()
        .filter(|g| g.class_id == class_id)
        .map(|g| iou_3d(b, &g.bbox))
        .fold(0.0, f64::max)
}

/// One teacher's detections on `category`: each ground-truth object is
/// missed with the false-negative rate or reported with jitter (possibly
/// twice), and Poisson false positives are scattered over the prior's
/// annuli. Scores are the true IoU plus Gaussian noise.
pub fn gen_teacher_output(
    labels: &[Detection],
    ctx: &SimContext,
    model: &TeacherNoiseModel,
    category: Category,
    teacher_id: u32,
    seed: u64,
) -> TeacherOutput {
    let SimContext { prior, range, table } = *ctx;
    let mut rng = rng::stream(seed, &[category.index() as u64, teacher_id as u64]);
    let n = model.noise(category);
    let ids = table.ids_in(category);
    let gts: Vec<&Detection> = labels.iter().filter(|d| ids.contains(&d.class_id)).collect();
    let mut detections = Vec::new();
    for g in &gts {
        if rng.random::<f64>() < n.fn_rate {
            continue;
        }
        let b = jitter(&mut rng, &g.bbox, n, 1.0);
        detections.push(scored(&mut rng, b, g.class_id, iou_3d(&b, &g.bbox), n, teacher_id));
        if rng.random::<f64>() < n.dup_rate {
            let d = jitter(&mut rng, &g.bbox, n, 2.0);
            let iou = iou_3d(&d, &g.bbox);
            detections.push(scored(&mut rng, d, g.class_id, iou, n, teacher_id));
        }
    }
    let priors: Vec<&ClassPrior> = prior.classes.iter().filter(|c| ids.contains(&c.class_id)).collect();
    if !priors.is_empty() {
        for _ in 0..poisson(&mut rng, n.fp_rate) {
            let c = priors[rng.random_range(0..priors.len())];
            let r = rng.random_range(c.radius[0]..=c.radius[1]);
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (x, y) = (r * theta.cos(), r * theta.sin());
            if !(range.min[0] <= x && x <= range.max[0] && range.min[1] <= y && y <= range.max[1]) {
                continue;
            }
            let [l, w, h] = c.size_mean;
            let b = Box3D::new(x, y, prior.ground_z + 0.5 * h, l, w, h, rng.random_range(-3.0..3.0)).expect("prior sizes are positive");
            let iou = best_iou(&b, &gts, c.class_id);
            detections.push(scored(&mut rng, b, c.class_id, iou, n, teacher_id));
        }
    }
    TeacherOutput { teacher_id, category, detections }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::ClassTable;
    use crate::harness::scene::{gen_labels, ScenePrior};
    use crate::io::PointRange;

    fn labels(seed: u64) -> Vec<Detection> {
        gen_labels(&ScenePrior::default(), &PointRange::default(), seed)
    }

    fn run(labels: &[Detection], model: &TeacherNoiseModel, cat: Category, seed: u64) -> TeacherOutput {
        let (prior, range, table) = (ScenePrior::default(), PointRange::default(), ClassTable::kitti());
        let ctx = SimContext { prior: &prior, range: &range, table: &table };
        gen_teacher_output(labels, &ctx, model, cat, 0, seed)
    }

    #[test]
    fn zero_noise_reproduces_ground_truth() {
        let model = TeacherNoiseModel::uniform(CategoryNoise::NONE);
        for seed in 0..20 {
            let gt = labels(seed);
            for cat in Category::ALL {
                let out = run(&gt, &model, cat, seed);
                let want: Vec<_> = gt.iter().filter(|d| ClassTable::kitti().category_of(d.class_id) == Some(cat)).collect();
                assert_eq!(out.detections.len(), want.len());
                for (d, g) in out.detections.iter().zip(want) {
                    assert_eq!((d.bbox, d.class_id), (g.bbox, g.class_id));
                    assert_eq!((d.cls_score, d.iou_score), (1.0, 1.0));
                }
            }
        }
    }

    #[test]
    fn full_miss_rate_gives_nothing() {
        let model = TeacherNoiseModel::uniform(CategoryNoise { fn_rate: 1.0, ..CategoryNoise::NONE });
        assert!(run(&labels(1), &model, Category::Vehicle, 1).detections.is_empty());
    }

    #[test]
    fn measured_miss_rate_matches() {
        let noise = CategoryNoise { fn_rate: 0.2, ..CategoryNoise::specialist() };
        let noise = CategoryNoise { fp_rate: 0.0, dup_rate: 0.0, ..noise };
        let model = TeacherNoiseModel::uniform(noise);
        let (mut total, mut found) = (0usize, 0usize);
        let mut seed = 0;
        while total < 10_000 {
            let gt = labels(seed);
            let out = run(&gt, &model, Category::Vehicle, seed);
            total += gt.iter().filter(|d| d.class_id == 1).count();
            found += out.detections.len();
            seed += 1;
        }
        let rate = 1.0 - found as f64 / total as f64;
        assert!((rate - 0.2).abs() <= 0.02, "measured {rate}");
    }

    #[test]
    fn only_category_classes_emitted() {
        let model = TeacherNoiseModel::uniform(CategoryNoise::generalist());
        for seed in 0..20 {
            let out = run(&labels(seed), &model, Category::Pedestrian, seed);
            assert!(out.detections.iter().all(|d| d.class_id == 2));
            assert!(out.validate(&ClassTable::kitti()).is_ok());
        }
    }

    #[test]
    fn specialist_is_better_on_its_category() {
        let m = TeacherNoiseModel::specialist(Category::Cyclist, CategoryNoise::specialist(), CategoryNoise::generalist());
        assert!(m.noise(Category::Cyclist).center_std < m.noise(Category::Vehicle).center_std);
        assert!(m.noise(Category::Cyclist).fn_rate < m.noise(Category::Pedestrian).fn_rate);
    }
}
