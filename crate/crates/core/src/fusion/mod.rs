//! Multi-teacher pseudo-label generation: per-teacher NMS, merging across
//! category-specialist teachers, and dual-threshold filtering.

mod eval;
mod threshold;

pub use eval::{ap_r40, evaluate, pooled_curve, pr_curve, precision_at_recall, ClassMetrics, RECALL_POSITIONS};
pub use threshold::{
    band_from_scores, calibrate_dynamic_thresholds, three_means, ClassThresholds, ScoreBand, ThresholdMode,
    ThresholdPolicy, Verdict,
};

use std::cmp::Ordering;

use crate::classes::{Category, ClassTable};
use crate::error::{Error, Result};
use crate::geometry::{nms, Detection, NmsConfig};

/// One specialist teacher's detections for a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub teacher_id: u32,
    pub category: Category,
    pub detections: Vec<Detection>,
}

impl TeacherOutput {
    pub fn validate(&self, table: &ClassTable) -> Result<()> {
        for d in &self.detections {
            d.validate()?;
            if table.category_of(d.class_id) != Some(self.category) {
                return Err(Error::InvalidArgument(format!(
                    "teacher {} ({}) produced class {} outside its category",
                    self.teacher_id, self.category, d.class_id
                )));
            }
            if d.teacher_id.is_some_and(|t| t != self.teacher_id) {
                return Err(Error::InvalidArgument(format!(
                    "teacher {} output carries a detection tagged teacher {}",
                    self.teacher_id,
                    d.teacher_id.unwrap()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub detection: Detection,
    /// Between the low and high thresholds: kept for consumers that want
    /// graded supervision, ignored by default.
    pub ambiguous: bool,
}

/// Ascending class id, then descending score; stable otherwise.
fn output_order(a: &PseudoLabel, b: &PseudoLabel) -> Ordering {
    a.detection
        .class_id
        .cmp(&b.detection.class_id)
        .then(b.detection.cls_score.total_cmp(&a.detection.cls_score))
}

/// Per-teacher NMS survivors, concatenated in teacher order, each tagged
/// with its teacher id. No suppression happens across teachers.
pub fn merge_candidates(outputs: &[TeacherOutput], nms_cfg: &NmsConfig, table: &ClassTable) -> Result<Vec<Detection>> {
    let mut seen = [None; 3];
    for o in outputs {
        if let Some(prev) = seen[o.category.index()].replace(o.teacher_id) {
            return Err(Error::Config(format!(
                "teachers {prev} and {} both claim category {}",
                o.teacher_id, o.category
            )));
        }
        o.validate(table)?;
    }
    let mut merged = Vec::new();
    for o in outputs {
        let kept = nms(&o.detections, nms_cfg.threshold, nms_cfg.metric);
        merged.extend(kept.into_iter().map(|d| Detection { teacher_id: Some(o.teacher_id), ..d }));
    }
    Ok(merged)
}

/// Keeps candidates passing the low thresholds of their class; those short
/// of a high threshold are flagged ambiguous. Sorted by class, then score.
pub fn filter_candidates(candidates: &[Detection], policy: &ThresholdPolicy) -> Vec<PseudoLabel> {
    let mut out: Vec<PseudoLabel> = candidates
        .iter()
        .filter_map(|d| match policy.for_class(d.class_id).judge(d) {
            Verdict::Confident => Some(PseudoLabel { detection: *d, ambiguous: false }),
            Verdict::Ambiguous => Some(PseudoLabel { detection: *d, ambiguous: true }),
            Verdict::Rejected => None,
        })
        .collect();
    out.sort_by(output_order);
    out
}

/// One frame's pseudo-labels from the category teachers.
pub fn fuse(outputs: &[TeacherOutput], policy: &ThresholdPolicy, nms_cfg: &NmsConfig, table: &ClassTable) -> Result<Vec<PseudoLabel>> {
    let merged = merge_candidates(outputs, nms_cfg, table)?;
    Ok(filter_candidates(&merged, policy))
}

/// Confident labels only, as plain detections.
pub fn confident(labels: &[PseudoLabel]) -> Vec<Detection> {
    labels.iter().filter(|l| !l.ambiguous).map(|l| l.detection).collect()
}

/// Fuses a batch of frames. In dynamic mode the thresholds are calibrated
/// once over the merged candidates of the whole batch, then applied to every
/// frame. Returns the labels per frame and the policy used.
pub fn fuse_batch(
    frames: &[Vec<TeacherOutput>],
    policy: &ThresholdPolicy,
    min_samples: usize,
    nms_cfg: &NmsConfig,
    table: &ClassTable,
) -> Result<(Vec<Vec<PseudoLabel>>, ThresholdPolicy)> {
    use rayon::prelude::*;
    let merged: Vec<Vec<Detection>> = frames
        .par_iter()
        .map(|f| merge_candidates(f, nms_cfg, table))
        .collect::<Result<_>>()?;
    let policy = match policy.mode {
        ThresholdMode::Fixed => policy.clone(),
        ThresholdMode::Dynamic => {
            let pool: Vec<Detection> = merged.iter().flatten().copied().collect();
            calibrate_dynamic_thresholds(&pool, policy, min_samples)
        }
    };
    let labels = merged.par_iter().map(|m| filter_candidates(m, &policy)).collect();
    Ok((labels, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;
    use proptest::prelude::*;

    fn d(class_id: u32, x: f64, cls: f64, iou: f64) -> Detection {
        Detection {
            bbox: Box3D::new(x, 5.0, 0.0, 2.0, 1.0, 1.5, 0.0).unwrap(),
            class_id,
            cls_score: cls,
            iou_score: iou,
            teacher_id: None,
        }
    }

    fn policy(cls_high: f64, iou_high: f64) -> ThresholdPolicy {
        ThresholdPolicy::fixed(ClassThresholds {
            cls: ScoreBand { low: cls_high, high: cls_high },
            iou: ScoreBand { low: iou_high, high: iou_high },
        })
        .unwrap()
    }

    fn teacher(id: u32, category: Category, detections: Vec<Detection>) -> TeacherOutput {
        TeacherOutput { teacher_id: id, category, detections }
    }

    #[test]
    fn single_clean_teacher_passes_through() {
        let dets = vec![d(1, 0.0, 0.9, 0.8), d(1, 10.0, 0.7, 0.9), d(1, 20.0, 0.6, 0.6)];
        let out = fuse(&[teacher(0, Category::Vehicle, dets.clone())], &policy(0.5, 0.5), &NmsConfig::default(), &ClassTable::kitti()).unwrap();
        let got: Vec<Detection> = out.iter().map(|l| Detection { teacher_id: None, ..l.detection }).collect();
        assert_eq!(got, dets);
        assert!(out.iter().all(|l| !l.ambiguous && l.detection.teacher_id == Some(0)));
    }

    #[test]
    fn below_threshold_excluded() {
        let dets = vec![d(1, 0.0, 0.9, 0.8), d(1, 10.0, 0.4, 0.9)];
        let out = fuse(&[teacher(0, Category::Vehicle, dets)], &policy(0.5, 0.5), &NmsConfig::default(), &ClassTable::kitti()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].detection.cls_score, 0.9);
    }

    #[test]
    fn duplicate_category_is_config_error() {
        let err = fuse(
            &[teacher(0, Category::Vehicle, vec![]), teacher(1, Category::Vehicle, vec![])],
            &policy(0.5, 0.5),
            &NmsConfig::default(),
            &ClassTable::kitti(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn class_outside_category_rejected() {
        let err = fuse(&[teacher(0, Category::Pedestrian, vec![d(1, 0.0, 0.9, 0.9)])], &policy(0.5, 0.5), &NmsConfig::default(), &ClassTable::kitti())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn overlap_across_teachers_is_not_suppressed() {
        // Same footprint, different categories: both survive.
        let out = fuse(
            &[teacher(0, Category::Vehicle, vec![d(1, 0.0, 0.9, 0.9)]), teacher(1, Category::Cyclist, vec![d(3, 0.0, 0.8, 0.8)])],
            &policy(0.5, 0.5),
            &NmsConfig::default(),
            &ClassTable::kitti(),
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        // Overlap within a teacher is suppressed.
        let out = fuse(&[teacher(0, Category::Vehicle, vec![d(1, 0.0, 0.8, 0.9), d(1, 0.2, 0.9, 0.9)])], &policy(0.5, 0.5), &NmsConfig::default(), &ClassTable::kitti())
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].detection.bbox.cx, 0.2);
    }

    #[test]
    fn ambiguous_band_flagged() {
        let p = ThresholdPolicy::fixed(ClassThresholds {
            cls: ScoreBand { low: 0.3, high: 0.6 },
            iou: ScoreBand { low: 0.3, high: 0.6 },
        })
        .unwrap();
        let dets = vec![d(2, 0.0, 0.9, 0.9), d(2, 10.0, 0.5, 0.9), d(2, 20.0, 0.2, 0.9)];
        let out = fuse(&[teacher(4, Category::Pedestrian, dets)], &p, &NmsConfig::default(), &ClassTable::kitti()).unwrap();
        assert_eq!(out.iter().map(|l| l.ambiguous).collect::<Vec<_>>(), vec![false, true]);
        assert_eq!(confident(&out).len(), 1);
    }

    #[test]
    fn dynamic_batch_uses_calibrated_policy() {
        let frames: Vec<Vec<TeacherOutput>> = (0..12)
            .map(|i| {
                let s = [0.1, 0.5, 0.9][i % 3];
                vec![teacher(0, Category::Vehicle, vec![d(1, 0.0, s, s)])]
            })
            .collect();
        let mut base = policy(0.0, 0.0);
        base.mode = ThresholdMode::Dynamic;
        let (labels, used) = fuse_batch(&frames, &base, 8, &NmsConfig::default(), &ClassTable::kitti()).unwrap();
        let t = used.for_class(1);
        assert!((t.cls.high - 0.7).abs() < 1e-12 && (t.cls.low - 0.3).abs() < 1e-12);
        let kept: Vec<usize> = labels.iter().map(|l| confident(l).len()).collect();
        assert_eq!(kept.iter().sum::<usize>(), 4);
    }

    fn arb_dets(class_id: u32) -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0, 0.0f64..1.0, 0.0f64..1.0), 0..25).prop_map(move |v| {
            v.into_iter()
                .map(|(x, y, c, i)| Detection {
                    bbox: Box3D::new(x, y, 0.0, 2.0, 1.0, 1.5, 0.3).unwrap(),
                    class_id,
                    cls_score: c,
                    iou_score: i,
                    teacher_id: None,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn output_is_subset_sorted_and_monotone(
            a in arb_dets(1), b in arb_dets(2), c in arb_dets(3),
            lo in 0.0f64..0.5, hi in 0.5f64..1.0, bump in 0.0f64..0.3,
        ) {
            let table = ClassTable::kitti();
            let outputs = vec![
                teacher(0, Category::Vehicle, a.clone()),
                teacher(1, Category::Pedestrian, b.clone()),
                teacher(2, Category::Cyclist, c.clone()),
            ];
            let band = |l: f64, h: f64| ClassThresholds { cls: ScoreBand { low: l, high: h }, iou: ScoreBand { low: l, high: h } };
            let p1 = ThresholdPolicy::fixed(band(lo, hi)).unwrap();
            let p2 = ThresholdPolicy::fixed(band((lo + bump).min(hi), hi)).unwrap();
            let out1 = fuse(&outputs, &p1, &NmsConfig::default(), &table).unwrap();
            let out2 = fuse(&outputs, &p2, &NmsConfig::default(), &table).unwrap();
            prop_assert!(out2.len() <= out1.len());
            prop_assert!(confident(&out2).len() <= out1.len());
            for w in out1.windows(2) {
                prop_assert!(output_order(&w[0], &w[1]) != Ordering::Greater);
            }
            for l in &out1 {
                let src = match l.detection.teacher_id { Some(0) => &a, Some(1) => &b, _ => &c };
                let found = src.iter().any(|s| Detection { teacher_id: l.detection.teacher_id, ..*s } == l.detection);
                prop_assert!(found);
                prop_assert_eq!(table.category_of(l.detection.class_id), Some(outputs[l.detection.teacher_id.unwrap() as usize].category));
            }
        }
    }

    /// Three specialists over two frames. Expected by hand:
    /// - the vehicle teacher's 0.7 duplicate is suppressed by its 0.9 box;
    /// - the 0.2 car is rejected, the 0.45 car and the 0.4-IoU pedestrian
    ///   are ambiguous;
    /// - the cyclist overlapping the car survives, as teachers never
    ///   suppress each other.
    #[test]
    fn three_teacher_fixture_matches_golden() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fuse3");
        let cfg = crate::io::PipelineConfig::load(&root.join("config.toml")).unwrap();
        let (ids, frames) = crate::io::load_teacher_dets(&root.join("dets")).unwrap();
        assert_eq!(ids, ["000000", "000001"]);
        let policy = cfg.threshold_policy().unwrap();
        let (labels, _) = fuse_batch(&frames, &policy, cfg.thresholds.min_samples, &cfg.nms, &cfg.classes).unwrap();

        let summary: Vec<(u32, f64, bool, Option<u32>)> = labels[0]
            .iter()
            .map(|l| (l.detection.class_id, l.detection.cls_score, l.ambiguous, l.detection.teacher_id))
            .collect();
        assert_eq!(
            summary,
            [
                (1, 0.9, false, Some(0)),
                (1, 0.45, true, Some(0)),
                (2, 0.8, false, Some(1)),
                (2, 0.65, true, Some(1)),
                (3, 0.95, false, Some(2)),
                (3, 0.7, false, Some(2)),
            ]
        );
        assert_eq!(labels[1].len(), 1);
        assert_eq!(labels[1][0].detection.cls_score, 0.61);

        let bless = std::env::var_os("PIEFORGE_BLESS").is_some();
        for (id, l) in ids.iter().zip(&labels) {
            let got = crate::io::pseudo_label_set(id, l).to_json();
            let golden = root.join("golden").join(format!("{id}.json"));
            if bless {
                std::fs::write(&golden, &got).unwrap();
            }
            assert_eq!(got, std::fs::read_to_string(&golden).unwrap(), "{id}");
        }
    }

}
