use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, Detection};

/// Number of recall sample points in the AP integral.
pub const RECALL_POSITIONS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub num_gt: usize,
    pub num_pred: usize,
    pub true_positives: usize,
    /// Over all predictions of the class.
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    /// `(precision, recall)` after each prediction in descending score order.
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

/// Greedy matching within one frame: predictions in descending `cls_score`
/// order each claim the unmatched ground truth with the highest 3-D IoU, if
/// that IoU reaches `threshold`. Returns one flag per prediction, in the
/// sorted order, paired with its score.
fn match_frame(preds: &[&Detection], gts: &[&Detection], threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].cls_score.total_cmp(&preds[a].cls_score));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let p = preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let iou = iou_3d(&p.bbox, &g.bbox);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            (p.cls_score, best.is_some())
        })
        .collect()
}

/// Precision/recall after each ranked prediction.
pub fn pr_curve(ranked_hits: &[bool], num_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    ranked_hits
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
            (tp as f64 / (k + 1) as f64, recall)
        })
        .collect()
}

/// Interpolated AP over recall positions `1/40, 2/40, ..., 1`: the mean of
/// the best precision reached at or beyond each position.
pub fn ap_r40(curve: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    for i in 1..=RECALL_POSITIONS {
        let r = i as f64 / RECALL_POSITIONS as f64;
        let p = curve
            .iter()
            .filter(|&&(_, rec)| rec >= r - 1e-12)
            .map(|&(p, _)| p)
            .fold(0.0, f64::max);
        sum += p;
    }
    sum / RECALL_POSITIONS as f64
}

/// Precision of the shortest ranked prefix whose recall reaches `recall`,
/// or `None` when the curve never gets there.
pub fn precision_at_recall(curve: &[(f64, f64)], recall: f64) -> Option<f64> {
    curve.iter().find(|&&(_, r)| r >= recall - 1e-12).map(|&(p, _)| p)
}

/// Ranked `(score, hit)` pairs of one class over a batch, plus the number
/// of ground-truth objects of that class.
fn class_hits(preds: &[Vec<Detection>], gts: &[Vec<Detection>], class_id: u32, threshold: f64) -> (Vec<(f64, bool)>, usize) {
    let mut scored = Vec::new();
    let mut num_gt = 0;
    for (p, g) in preds.iter().zip(gts) {
        let p: Vec<&Detection> = p.iter().filter(|d| d.class_id == class_id).collect();
        let g: Vec<&Detection> = g.iter().filter(|d| d.class_id == class_id).collect();
        num_gt += g.len();
        scored.extend(match_frame(&p, &g, threshold));
    }
    // Stable: equal scores keep frame order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    (scored, num_gt)
}

fn check_frames(preds: &[Vec<Detection>], gts: &[Vec<Detection>]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction frames but {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Class-agnostic precision/recall curve: each class is matched with its
/// own threshold, then all predictions are ranked together by score.
pub fn pooled_curve(
    preds: &[Vec<Detection>],
    gts: &[Vec<Detection>],
    iou_thresholds: &BTreeMap<u32, f64>,
) -> Result<Vec<(f64, f64)>> {
    check_frames(preds, gts)?;
    let mut all = Vec::new();
    let mut num_gt = 0;
    for (&class_id, &threshold) in iou_thresholds {
        let (hits, n) = class_hits(preds, gts, class_id, threshold);
        all.extend(hits);
        num_gt += n;
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let hits: Vec<bool> = all.iter().map(|s| s.1).collect();
    Ok(pr_curve(&hits, num_gt))
}

/// Per-class metrics over a batch of frames. `preds[i]` and `gts[i]` belong
/// to the same frame. Classes without a threshold entry are ignored.
pub fn evaluate(
    preds: &[Vec<Detection>],
    gts: &[Vec<Detection>],
    iou_thresholds: &BTreeMap<u32, f64>,
) -> Result<BTreeMap<u32, ClassMetrics>> {
    check_frames(preds, gts)?;
    let mut out = BTreeMap::new();
    for (&class_id, &threshold) in iou_thresholds {
        let (scored, num_gt) = class_hits(preds, gts, class_id, threshold);
        let hits: Vec<bool> = scored.iter().map(|s| s.1).collect();
        let curve = pr_curve(&hits, num_gt);
        let tp = hits.iter().filter(|&&h| h).count();
        out.insert(
            class_id,
            ClassMetrics {
                num_gt,
                num_pred: hits.len(),
                true_positives: tp,
                precision: if hits.is_empty() { 0.0 } else { tp as f64 / hits.len() as f64 },
                recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
                ap: ap_r40(&curve),
                curve,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;

    fn gt(x: f64) -> Detection {
        Detection::ground_truth(Box3D::new(x, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap(), 1)
    }

    fn pred(x: f64, score: f64) -> Detection {
        Detection { cls_score: score, iou_score: score, ..gt(x) }
    }

    fn thr() -> BTreeMap<u32, f64> {
        BTreeMap::from([(1, 0.7)])
    }

    #[test]
    fn perfect_predictions_score_one() {
        let g = vec![vec![gt(0.0), gt(10.0)], vec![gt(20.0)]];
        let m = &evaluate(&g, &g, &thr()).unwrap()[&1];
        assert_eq!((m.ap, m.precision, m.recall), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let g = vec![vec![gt(0.0)]];
        let m = &evaluate(&[vec![]], &g, &thr()).unwrap()[&1];
        assert_eq!((m.ap, m.recall, m.num_pred), (0.0, 0.0, 0));
    }

    /// Four ground truths, five predictions; the third-ranked one is a false
    /// positive far from everything.
    ///
    /// rank  hit  precision  recall
    ///   1    y     1/1       1/4
    ///   2    y     2/2       2/4
    ///   3    n     2/3       2/4
    ///   4    y     3/4       3/4
    ///   5    y     4/5       4/4
    ///
    /// Interpolated precision is 1 for positions 1..=20, 4/5 for 21..=40
    /// (the 3/4 at recall 3/4 is dominated by 4/5 later), so
    /// AP = (20 * 1 + 20 * 0.8) / 40 = 0.9.
    #[test]
    fn five_box_hand_computation() {
        let g = vec![vec![gt(0.0), gt(10.0), gt(20.0), gt(30.0)]];
        let p = vec![vec![pred(0.0, 0.95), pred(10.1, 0.9), pred(50.0, 0.8), pred(20.0, 0.7), pred(29.9, 0.6)]];
        let m = &evaluate(&p, &g, &thr()).unwrap()[&1];
        let expect = [(1.0, 0.25), (1.0, 0.5), (2.0 / 3.0, 0.5), (0.75, 0.75), (0.8, 1.0)];
        assert_eq!(m.curve.len(), 5);
        for (got, want) in m.curve.iter().zip(expect) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12, "{got:?} vs {want:?}");
        }
        assert!((m.ap - 0.9).abs() < 1e-12, "{}", m.ap);
        assert_eq!(m.true_positives, 4);
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert_eq!(precision_at_recall(&m.curve, 0.5), Some(1.0));
        assert_eq!(precision_at_recall(&m.curve, 0.75), Some(0.75));
        assert_eq!(precision_at_recall(&m.curve, 1.01), None);
    }

    #[test]
    fn each_ground_truth_matched_once() {
        let g = vec![vec![gt(0.0)]];
        let p = vec![vec![pred(0.0, 0.9), pred(0.0, 0.8)]];
        let m = &evaluate(&p, &g, &thr()).unwrap()[&1];
        assert_eq!(m.true_positives, 1);
        assert_eq!(m.num_pred, 2);
    }

    #[test]
    fn ap_invariant_under_score_rescaling() {
        let g = vec![vec![gt(0.0), gt(10.0), gt(20.0)], vec![gt(5.0)]];
        let p = vec![vec![pred(0.0, 0.9), pred(40.0, 0.7), pred(20.2, 0.4)], vec![pred(5.0, 0.5), pred(60.0, 0.85)]];
        let scaled: Vec<Vec<Detection>> = p
            .iter()
            .map(|f| f.iter().map(|d| Detection { cls_score: d.cls_score * 0.37, ..*d }).collect())
            .collect();
        let a = evaluate(&p, &g, &thr()).unwrap()[&1].ap;
        let b = evaluate(&scaled, &g, &thr()).unwrap()[&1].ap;
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_curve_merges_classes_by_score() {
        let mut ped = gt(40.0);
        ped.class_id = 2;
        let g = vec![vec![gt(0.0), ped]];
        let mut ped_pred = pred(40.0, 0.95);
        ped_pred.class_id = 2;
        let p = vec![vec![pred(0.0, 0.5), pred(80.0, 0.9), ped_pred]];
        let both = BTreeMap::from([(1, 0.7), (2, 0.5)]);
        let c = pooled_curve(&p, &g, &both).unwrap();
        assert_eq!(c, vec![(1.0, 0.5), (0.5, 0.5), (2.0 / 3.0, 1.0)]);
    }

    #[test]
    fn frame_count_mismatch_is_error() {
        assert!(evaluate(&[vec![]], &[], &thr()).is_err());
    }
}
