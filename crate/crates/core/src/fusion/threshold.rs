use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    #[default]
    Fixed,
    Dynamic,
}

/// Low/high cutoffs on one score channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreBand {
    pub low: f64,
    pub high: f64,
}

impl ScoreBand {
    fn validate(&self, what: &str) -> Result<()> {
        if !(0.0 <= self.low && self.low <= self.high && self.high <= 1.0) {
            return Err(Error::Config(format!(
                "{what}: need 0 <= low <= high <= 1, got low {} high {}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassThresholds {
    pub cls: ScoreBand,
    pub iou: ScoreBand,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds {
            cls: ScoreBand { low: 0.3, high: 0.6 },
            iou: ScoreBand { low: 0.25, high: 0.5 },
        }
    }
}

/// How a detection fares against its class thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Confident,
    Ambiguous,
    Rejected,
}

impl ClassThresholds {
    pub fn validate(&self) -> Result<()> {
        self.cls.validate("cls thresholds")?;
        self.iou.validate("iou thresholds")
    }

    pub fn judge(&self, d: &Detection) -> Verdict {
        if d.cls_score >= self.cls.high && d.iou_score >= self.iou.high {
            Verdict::Confident
        } else if d.cls_score >= self.cls.low && d.iou_score >= self.iou.low {
            Verdict::Ambiguous
        } else {
            Verdict::Rejected
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub mode: ThresholdMode,
    pub default: ClassThresholds,
    pub per_class: BTreeMap<u32, ClassThresholds>,
}

impl ThresholdPolicy {
    pub fn new(mode: ThresholdMode, default: ClassThresholds, per_class: BTreeMap<u32, ClassThresholds>) -> Result<Self> {
        default.validate()?;
        for (id, t) in &per_class {
            t.validate().map_err(|e| Error::Config(format!("class {id}: {e}")))?;
        }
        Ok(ThresholdPolicy { mode, default, per_class })
    }

    pub fn fixed(default: ClassThresholds) -> Result<Self> {
        ThresholdPolicy::new(ThresholdMode::Fixed, default, BTreeMap::new())
    }

    pub fn for_class(&self, class_id: u32) -> &ClassThresholds {
        self.per_class.get(&class_id).unwrap_or(&self.default)
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Lloyd's 1-D 3-means seeded at the 0.1/0.5/0.9 quantiles. Returns the
/// centers in ascending order. Ties in assignment go to the lower center.
pub fn three_means(scores: &[f64]) -> [f64; 3] {
    assert!(!scores.is_empty(), "three_means needs data");
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut centers = [quantile(&sorted, 0.1), quantile(&sorted, 0.5), quantile(&sorted, 0.9)];
    let mut assign = vec![usize::MAX; sorted.len()];
    for _ in 0..1000 {
        let mut changed = false;
        for (a, &s) in assign.iter_mut().zip(&sorted) {
            let mut best = 0;
            for k in 1..3 {
                if (s - centers[k]).abs() < (s - centers[best]).abs() {
                    best = k;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sum = [0.0; 3];
        let mut n = [0usize; 3];
        for (&a, &s) in assign.iter().zip(&sorted) {
            sum[a] += s;
            n[a] += 1;
        }
        for k in 0..3 {
            if n[k] > 0 {
                centers[k] = sum[k] / n[k] as f64;
            }
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

/// `(low, high)` from the 3-means centers: midpoints of the bottom two and
/// the top two.
pub fn band_from_scores(scores: &[f64]) -> ScoreBand {
    let [a, b, c] = three_means(scores);
    ScoreBand { low: 0.5 * (a + b), high: 0.5 * (b + c) }
}

/// Recomputes per-class thresholds from a pooled set of detections. Classes
/// with fewer than `min_samples` detections keep `fallback`'s values.
pub fn calibrate_dynamic_thresholds(dets: &[Detection], fallback: &ThresholdPolicy, min_samples: usize) -> ThresholdPolicy {
    let mut by_class: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for d in dets {
        let e = by_class.entry(d.class_id).or_default();
        e.0.push(d.cls_score);
        e.1.push(d.iou_score);
    }
    let mut per_class = fallback.per_class.clone();
    for (id, (cls, iou)) in by_class {
        if cls.len() < min_samples.max(1) {
            continue;
        }
        per_class.insert(id, ClassThresholds { cls: band_from_scores(&cls), iou: band_from_scores(&iou) });
    }
    ThresholdPolicy { mode: ThresholdMode::Dynamic, default: fallback.default, per_class }
}
