//! Weak augmentation and pie-based point compensating augmentation.
//!
//! The compensating pipeline runs per frame: label foregrounds are grouped
//! into equal-angle azimuth sectors ([`partition_pies`]), points are
//! transplanted from dense-sector objects into sparse-sector objects of the
//! same class ([`compensate`]), the result is banked in a [`SemiDb`], and
//! bank entries are later pasted into free space of other frames
//! ([`inject_from_semidb`]).

mod compensate;
mod inject;
mod pie;
mod semidb;
mod weak;

pub use compensate::{compensate, transplant, BankObject, BankRole, Compensation, CompensationStats};
pub use inject::{inject_from_semidb, ClassInjectStats, InjectStats, Injection};
pub use pie::{partition_pies, pie_id, sector_count, Pie, PieObject, DEFAULT_DEG};
pub use semidb::{build_semidb, SemiDb, SemiDbEntry, MAGIC as SEMIDB_MAGIC};
pub use weak::{weak_augment, WeakAugConfig, WeakAugRecord};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{Detection, PointCloud};
use crate::rng;

/// One frame's input to the compensating pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub cloud: PointCloud,
    pub labels: Vec<Detection>,
    /// Ground-truth frames only receive injections when the config allows it.
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PieAugOutput {
    pub db: SemiDb,
    pub frames: Vec<Injection>,
    pub compensation: Vec<CompensationStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PieAugSummary {
    pub frames: usize,
    pub db_entries: usize,
    pub pies: usize,
    pub pie_pairs: usize,
    pub compensated: usize,
    pub points_added: usize,
    pub injected: usize,
}

impl PieAugOutput {
    pub fn summary(&self) -> PieAugSummary {
        let mut s = PieAugSummary {
            frames: self.frames.len(),
            db_entries: self.db.len(),
            ..Default::default()
        };
        for c in &self.compensation {
            s.pies += c.pies;
            s.pie_pairs += c.pie_pairs;
            s.compensated += c.compensated;
            s.points_added += c.points_added;
        }
        s.injected = self.frames.iter().map(|f| f.injected_entries.len()).sum();
        s
    }
}

/// Per-frame sector partition and compensation; the bank entries of all
/// frames form the semi-DB, in frame order.
pub fn build_bank(frames: &[FrameInput], deg: f64) -> Result<(SemiDb, Vec<CompensationStats>)> {
    let per_frame: Vec<(SemiDb, CompensationStats)> = frames
        .par_iter()
        .map(|f| {
            let pies = partition_pies(&f.labels, &f.cloud, deg)?;
            let comp = compensate(pies);
            Ok((SemiDb::from_bank(&comp.bank, &f.cloud.frame_id), comp.stats))
        })
        .collect::<Result<_>>()?;
    let mut db = SemiDb::new();
    let mut stats = Vec::with_capacity(per_frame.len());
    for (part, s) in per_frame {
        db.extend(part);
        stats.push(s);
    }
    Ok((db, stats))
}

/// Injects semi-DB samples into every eligible frame. Frame `i` draws from
/// the stream derived from `(seed, i)`, so results do not depend on the
/// worker count.
pub fn inject_frames(
    frames: &[FrameInput],
    db: &SemiDb,
    quotas: &BTreeMap<u32, usize>,
    inject_labeled: bool,
    seed: u64,
) -> Vec<Injection> {
    let none = BTreeMap::new();
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let q = if f.labeled && !inject_labeled { &none } else { quotas };
            inject_from_semidb(&f.cloud, &f.labels, db, q, rng::derive_seed(seed, &[i as u64]))
        })
        .collect()
}

/// The whole compensating augmentation over a batch of frames.
pub fn pieaug_frames(
    frames: &[FrameInput],
    deg: f64,
    quotas: &BTreeMap<u32, usize>,
    inject_labeled: bool,
    seed: u64,
) -> Result<PieAugOutput> {
    let (db, compensation) = build_bank(frames, deg)?;
    let injected = inject_frames(frames, &db, quotas, inject_labeled, seed);
    Ok(PieAugOutput { db, frames: injected, compensation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::ClassTable;
    use crate::io::{read_cloud, read_labels, LabelFrame};

    /// The `pie_scene` fixture: two cars holding 120 and 40 points share one
    /// 45-degree sector, cars with 6 and 10 points share another, and a
    /// 20-point pedestrian sits alone in a third.
    fn fixture_frame() -> FrameInput {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pie_scene");
        let (cloud, _) = read_cloud(&root.join("points/000000.bin")).unwrap();
        let (labels, _) = read_labels(&root.join("labels/000000.txt"), &ClassTable::kitti(), &LabelFrame::Lidar).unwrap();
        FrameInput { cloud, labels, labeled: true }
    }

    #[test]
    fn fixture_scene_compensation() {
        let frame = fixture_frame();
        let pies = partition_pies(&frame.labels, &frame.cloud, 45.0).unwrap();
        let means: Vec<f64> = pies.iter().map(|p| p.norm_density).collect();
        assert_eq!(means, [80.0, 20.0, 8.0]);

        let (db, stats) = build_bank(std::slice::from_ref(&frame), 45.0).unwrap();
        // Densest pairs with sparsest; the pedestrian's sector is the odd one.
        let expect = CompensationStats {
            pies: 3,
            pie_pairs: 1,
            compensated: 2,
            points_added: 160,
            skipped_empty_donors: 0,
            leftover_objects: 1,
        };
        assert_eq!(stats, [expect]);
        assert_eq!(db.len(), 5);
        let mut counts: Vec<usize> = db.entries().iter().map(|e| e.points.len()).collect();
        counts.sort_unstable();
        // 6 + 120 and 10 + 40 after rank pairing.
        assert_eq!(counts, [20, 40, 50, 120, 126]);
    }
}
