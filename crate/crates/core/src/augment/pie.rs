use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::geometry::{indices_in_box, Box3D, Detection, Point, PointCloud};

/// Sector width used when nothing else is configured.
pub const DEFAULT_DEG: f64 = 45.0;

/// Number of sectors for a sector width; `deg` must divide 360.
pub fn sector_count(deg: f64) -> Result<usize> {
    if !(deg > 0.0) || !deg.is_finite() || deg > 360.0 {
        return Err(Error::InvalidArgument(format!("pie width {deg} must be in (0, 360]")));
    }
    let n = 360.0 / deg;
    let rounded = n.round();
    if (n - rounded).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("pie width {deg} does not divide 360")));
    }
    Ok(rounded as usize)
}

/// Azimuth sector of a box center.
///
/// The azimuth is `atan2(cx, cy)` in degrees (clockwise from +y), shifted by
/// 180 into `[0, 360]` and divided by the sector width. The 360 edge folds
/// into the last sector. A box at the exact origin goes to sector 0.
pub fn pie_id(b: &Box3D, deg: f64) -> Result<usize> {
    let n = sector_count(deg)?;
    if b.cx == 0.0 && b.cy == 0.0 {
        warn!("box centered on the sensor origin; assigning pie 0");
        return Ok(0);
    }
    let azimuth = b.cx.atan2(b.cy).to_degrees();
    let k = ((azimuth + 180.0) / deg).floor();
    Ok((k.max(0.0) as usize).min(n - 1))
}

/// One labeled object together with its foreground points (world frame).
#[derive(Debug, Clone, PartialEq)]
pub struct PieObject {
    /// Position of the label in the frame's label list.
    pub label_index: usize,
    pub detection: Detection,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pie {
    pub pie_id: usize,
    pub objects: Vec<PieObject>,
    /// Mean foreground points per object.
    pub norm_density: f64,
}

impl Pie {
    fn new(pie_id: usize, objects: Vec<PieObject>) -> Self {
        let total: usize = objects.iter().map(|o| o.points.len()).sum();
        let norm_density = total as f64 / objects.len() as f64;
        Pie { pie_id, objects, norm_density }
    }

    pub fn point_total(&self) -> usize {
        self.objects.iter().map(|o| o.points.len()).sum()
    }
}

/// Groups labels with at least one foreground point into azimuth sectors,
/// densest sector first. Ties go to the lower sector id.
pub fn partition_pies(labels: &[Detection], cloud: &PointCloud, deg: f64) -> Result<Vec<Pie>> {
    sector_count(deg)?;
    let mut sectors: BTreeMap<usize, Vec<PieObject>> = BTreeMap::new();
    for (label_index, det) in labels.iter().enumerate() {
        let idx = indices_in_box(&cloud.points, &det.bbox);
        if idx.is_empty() {
            continue;
        }
        let k = pie_id(&det.bbox, deg)?;
        sectors.entry(k).or_default().push(PieObject {
            label_index,
            detection: *det,
            points: idx.into_iter().map(|i| cloud.points[i]).collect(),
        });
    }
    let mut pies: Vec<Pie> = sectors.into_iter().map(|(k, objs)| Pie::new(k, objs)).collect();
    // Stable sort over ascending ids keeps the lower id first on ties.
    pies.sort_by(|a, b| b.norm_density.total_cmp(&a.norm_density));
    Ok(pies)
}
