use serde::{Deserialize, Serialize};

use super::{bev_iou, iou_3d, Box3D, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NmsMetric {
    #[default]
    #[serde(rename = "bev")]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl NmsMetric {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            NmsMetric::Bev => bev_iou(a, b),
            NmsMetric::ThreeD => iou_3d(a, b),
        }
    }
}

impl std::str::FromStr for NmsMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bev" => Ok(NmsMetric::Bev),
            "3d" => Ok(NmsMetric::ThreeD),
            other => Err(format!("unknown NMS metric `{other}` (expected `bev` or `3d`)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmsConfig {
    pub threshold: f64,
    pub metric: NmsMetric,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            threshold: 0.1,
            metric: NmsMetric::Bev,
        }
    }
}

/// Indices of the survivors of greedy NMS on `cls_score`, highest score first.
///
/// A candidate is suppressed when its IoU with an already kept box is
/// strictly greater than `iou_threshold`. Equal scores keep input order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64, metric: NmsMetric) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort: ties stay in ascending index order.
    order.sort_by(|&a, &b| dets[b].cls_score.total_cmp(&dets[a].cls_score));

    let radii: Vec<f64> = dets.iter().map(|d| d.bbox.bev_radius()).collect();
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        let bi = &dets[i].bbox;
        for &j in &order[rank + 1..] {
            if suppressed[j] {
                continue;
            }
            let bj = &dets[j].bbox;
            let reach = radii[i] + radii[j];
            let (dx, dy) = (bi.cx - bj.cx, bi.cy - bj.cy);
            if dx * dx + dy * dy > reach * reach {
                continue;
            }
            if metric.iou(bi, bj) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn nms(dets: &[Detection], iou_threshold: f64, metric: NmsMetric) -> Vec<Detection> {
    nms_indices(dets, iou_threshold, metric)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}
