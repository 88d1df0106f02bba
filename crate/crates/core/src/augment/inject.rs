use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::semidb::SemiDb;
use crate::geometry::{bev_intersection_area, Box3D, Detection, PointCloud};
use crate::rng;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClassInjectStats {
    pub quota: usize,
    pub injected: usize,
    pub rejected: usize,
    /// The class ran out of entries before the quota was met.
    pub exhausted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InjectStats {
    pub per_class: BTreeMap<u32, ClassInjectStats>,
    pub points_removed: usize,
    pub points_added: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub cloud: PointCloud,
    /// Input labels followed by the injected ones.
    pub labels: Vec<Detection>,
    /// Semi-DB entry index of each injected label, in label order.
    pub injected_entries: Vec<usize>,
    pub stats: InjectStats,
}

/// Copy-paste of semi-DB entries into a frame.
///
/// Per class (ascending id) entries are drawn without replacement in a
/// seeded order until the quota is met. An entry is placed at its stored
/// pose and rejected if its footprint overlaps any existing or already
/// injected box. Scene points inside an accepted footprint are removed
/// before the entry's points are appended.
pub fn inject_from_semidb(
    cloud: &PointCloud,
    labels: &[Detection],
    db: &SemiDb,
    quotas: &BTreeMap<u32, usize>,
    seed: u64,
) -> Injection {
    let mut rng = rng::stream(seed, &[0x494e_4a45]);
    let by_class = db.by_class();
    let mut placed: Vec<Box3D> = labels.iter().map(|d| d.bbox).collect();
    let mut accepted: Vec<usize> = Vec::new();
    let mut stats = InjectStats::default();

    for (&class_id, &quota) in quotas {
        if quota == 0 {
            continue;
        }
        let mut cs = ClassInjectStats { quota, ..Default::default() };
        let mut candidates = by_class.get(&class_id).cloned().unwrap_or_default();
        candidates.shuffle(&mut rng);
        let mut drawn = 0;
        for &idx in &candidates {
            if cs.injected == quota {
                break;
            }
            drawn += 1;
            let b = db.entries()[idx].label.bbox;
            if placed.iter().any(|p| bev_intersection_area(p, &b) > 0.0) {
                cs.rejected += 1;
                continue;
            }
            placed.push(b);
            accepted.push(idx);
            cs.injected += 1;
        }
        cs.exhausted = cs.injected < quota && drawn == candidates.len();
        stats.per_class.insert(class_id, cs);
    }

    let footprints: Vec<Box3D> = accepted.iter().map(|&i| db.entries()[i].label.bbox).collect();
    let mut points: Vec<_> = cloud
        .points
        .iter()
        .filter(|p| !footprints.iter().any(|b| b.contains_bev(p.x as f64, p.y as f64)))
        .copied()
        .collect();
    stats.points_removed = cloud.points.len() - points.len();
    let mut out_labels = labels.to_vec();
    for &idx in &accepted {
        let entry = &db.entries()[idx];
        let world = entry.world_points();
        stats.points_added += world.len();
        points.extend(world);
        out_labels.push(entry.label);
    }

    Injection {
        cloud: PointCloud::new(cloud.frame_id.clone(), points),
        labels: out_labels,
        injected_entries: accepted,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::SemiDbEntry;
    use crate::geometry::{bev_iou, indices_in_box, Point};

    fn entry(class_id: u32, cx: f64, cy: f64, n: usize) -> SemiDbEntry {
        let bbox = Box3D::new(cx, cy, -0.8, 3.9, 1.7, 1.5, 0.5).unwrap();
        let det = Detection { bbox, class_id, cls_score: 0.9, iou_score: 0.8, teacher_id: None };
        let world: Vec<Point> = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64 - 0.5;
                let w = bbox.to_world([3.9 * t, 1.7 * t * t, 1.5 * t]);
                Point::new(w[0] as f32, w[1] as f32, w[2] as f32, 0.6)
            })
            .collect();
        SemiDbEntry::from_world(&det, &world, "src")
    }

    fn scene() -> (PointCloud, Vec<Detection>) {
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                pts.push(Point::new(i as f32 - 10.0, j as f32 - 30.0, -1.6, 0.1));
            }
        }
        let gt = vec![Detection::ground_truth(Box3D::new(5.0, 0.0, -0.8, 4.0, 1.8, 1.6, 0.0).unwrap(), 1)];
        (PointCloud::new("dst", pts), gt)
    }

    fn quotas(q: &[(u32, usize)]) -> BTreeMap<u32, usize> {
        q.iter().copied().collect()
    }

    #[test]
    fn zero_quota_is_identity() {
        let (cloud, labels) = scene();
        let db = SemiDb::from_entries(vec![entry(1, 20.0, 10.0, 30)]);
        let out = inject_from_semidb(&cloud, &labels, &db, &quotas(&[(1, 0), (2, 0)]), 3);
        assert_eq!(out.cloud, cloud);
        assert_eq!(out.labels, labels);
    }

    #[test]
    fn overlapping_entry_rejected_next_taken() {
        let (cloud, labels) = scene();
        let db = SemiDb::from_entries(vec![entry(1, 5.5, 0.3, 30), entry(1, 20.0, 10.0, 30)]);
        let out = inject_from_semidb(&cloud, &labels, &db, &quotas(&[(1, 2)]), 11);
        let cs = &out.stats.per_class[&1];
        assert_eq!((cs.injected, cs.rejected, cs.exhausted), (1, 1, true));
        assert_eq!(out.injected_entries, vec![1]);
        assert_eq!(out.labels.len(), 2);
    }

    #[test]
    fn injected_box_contains_exactly_its_entry_points() {
        let (cloud, labels) = scene();
        let db = SemiDb::from_entries(vec![entry(1, 20.0, 10.0, 80), entry(1, 14.0, -12.0, 25)]);
        let out = inject_from_semidb(&cloud, &labels, &db, &quotas(&[(1, 5)]), 1);
        assert_eq!(out.injected_entries.len(), 2);
        for (k, &idx) in out.injected_entries.iter().enumerate() {
            let b = out.labels[labels.len() + k].bbox;
            let inside: Vec<Point> = indices_in_box(&out.cloud.points, &b)
                .into_iter()
                .map(|i| out.cloud.points[i])
                .collect();
            assert_eq!(inside, db.entries()[idx].world_points());
        }
        for (i, a) in out.labels.iter().enumerate() {
            for b in &out.labels[i + 1..] {
                assert_eq!(bev_iou(&a.bbox, &b.bbox), 0.0);
            }
        }
        assert!(out.stats.points_removed > 0);
    }

    #[test]
    fn same_seed_same_result() {
        let (cloud, labels) = scene();
        let db = SemiDb::from_entries((0..6).map(|i| entry(1, 15.0 + 5.0 * i as f64, 12.0, 10)).collect());
        let a = inject_from_semidb(&cloud, &labels, &db, &quotas(&[(1, 3)]), 8);
        let b = inject_from_semidb(&cloud, &labels, &db, &quotas(&[(1, 3)]), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn missing_class_is_reported_not_an_error() {
        let (cloud, labels) = scene();
        let out = inject_from_semidb(&cloud, &labels, &SemiDb::new(), &quotas(&[(2, 4)]), 0);
        let cs = &out.stats.per_class[&2];
        assert_eq!((cs.injected, cs.exhausted), (0, true));
    }
}
