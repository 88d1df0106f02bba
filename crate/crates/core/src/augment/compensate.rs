use std::collections::{BTreeMap, VecDeque};

use log::warn;
use serde::Serialize;

use super::pie::{Pie, PieObject};
use crate::geometry::{transform_points, Box3D, Detection, Point};

/// How an object ended up in the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BankRole {
    /// Sparse-sector object that received donor points.
    Compensated,
    /// Dense-sector object that donated its points (stored as-is).
    Donor,
    /// Object of a processed sector pair that found no same-class partner.
    Unpaired,
    /// Object of the odd sector left once fewer than two remain.
    Leftover,
}

/// One object of the augmented foreground bank, points in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BankObject {
    pub label_index: usize,
    pub detection: Detection,
    pub points: Vec<Point>,
    pub original_count: usize,
    pub role: BankRole,
    /// Label index of the donor, for compensated objects.
    pub donor: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompensationStats {
    pub pies: usize,
    pub pie_pairs: usize,
    pub compensated: usize,
    pub points_added: usize,
    pub skipped_empty_donors: usize,
    pub leftover_objects: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Compensation {
    pub bank: Vec<BankObject>,
    pub stats: CompensationStats,
}

/// Maps donor points into the target box: into the donor's box frame,
/// per-axis scale by the size ratio, rotate to the target heading, move to
/// the target center.
pub fn transplant(donor_points: &[Point], donor: &Box3D, target: &Box3D) -> Vec<Point> {
    let local: Vec<Point> = donor_points
        .iter()
        .map(|p| {
            let [x, y, z] = donor.to_local(p.xyz());
            Point { x: x as f32, y: y as f32, z: z as f32, intensity: p.intensity }
        })
        .collect();
    let scale = [target.l / donor.l, target.w / donor.w, target.h / donor.h];
    transform_points(&local, scale, target.yaw, target.center())
        .expect("box sizes are positive, so the scale is too")
}

fn keep(obj: &PieObject, role: BankRole) -> BankObject {
    BankObject {
        label_index: obj.label_index,
        detection: obj.detection,
        points: obj.points.clone(),
        original_count: obj.points.len(),
        role,
        donor: None,
    }
}

/// Dense-to-sparse point compensation over sectors sorted densest first.
///
/// Each round pairs the densest remaining sector with the sparsest one.
/// Within a pair, objects are matched per class: the dense sector's objects
/// by descending point count against the sparse sector's by ascending point
/// count, rank to rank. Every object of a processed pair lands in the bank,
/// as do the objects of an odd sector left at the end.
pub fn compensate(pies: Vec<Pie>) -> Compensation {
    let mut stats = CompensationStats { pies: pies.len(), ..Default::default() };
    let mut bank = Vec::new();
    let mut queue: VecDeque<Pie> = pies.into();

    while queue.len() >= 2 {
        let dense = queue.pop_front().expect("len >= 2");
        let sparse = queue.pop_back().expect("len >= 2");
        stats.pie_pairs += 1;

        let by_class = |pie: &Pie| {
            let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, o) in pie.objects.iter().enumerate() {
                m.entry(o.detection.class_id).or_default().push(i);
            }
            m
        };
        let dense_by_class = by_class(&dense);
        let sparse_by_class = by_class(&sparse);
        let mut dense_used = vec![false; dense.objects.len()];
        let mut sparse_used = vec![false; sparse.objects.len()];

        for (class_id, mut donors) in dense_by_class {
            let Some(mut targets) = sparse_by_class.get(&class_id).cloned() else {
                continue;
            };
            let count = |pie: &Pie, i: usize| pie.objects[i].points.len();
            donors.sort_by_key(|&i| std::cmp::Reverse(count(&dense, i)));
            targets.sort_by_key(|&i| count(&sparse, i));

            for (&d, &s) in donors.iter().zip(&targets) {
                dense_used[d] = true;
                sparse_used[s] = true;
                let donor = &dense.objects[d];
                let target = &sparse.objects[s];
                if donor.points.is_empty() {
                    warn!(
                        "donor label {} has no points; target label {} kept as-is",
                        donor.label_index, target.label_index
                    );
                    stats.skipped_empty_donors += 1;
                    bank.push(keep(target, BankRole::Unpaired));
                    bank.push(keep(donor, BankRole::Donor));
                    continue;
                }
                let moved = transplant(&donor.points, &donor.detection.bbox, &target.detection.bbox);
                stats.compensated += 1;
                stats.points_added += moved.len();
                let mut points = target.points.clone();
                points.extend(moved);
                bank.push(BankObject {
                    label_index: target.label_index,
                    detection: target.detection,
                    points,
                    original_count: target.points.len(),
                    role: BankRole::Compensated,
                    donor: Some(donor.label_index),
                });
                bank.push(keep(donor, BankRole::Donor));
            }
        }
        for (i, obj) in sparse.objects.iter().enumerate() {
            if !sparse_used[i] {
                bank.push(keep(obj, BankRole::Unpaired));
            }
        }
        for (i, obj) in dense.objects.iter().enumerate() {
            if !dense_used[i] {
                bank.push(keep(obj, BankRole::Unpaired));
            }
        }
    }

    if let Some(last) = queue.pop_front() {
        stats.leftover_objects = last.objects.len();
        bank.extend(last.objects.iter().map(|o| keep(o, BankRole::Leftover)));
    }
    Compensation { bank, stats }
}
