//! Rotated NMS and class-wise average-precision metrics.
//!
//! Average precision uses all-point interpolation (area under the
//! monotone precision envelope) with greedy score-ordered matching,
//! which is what the modern DOTA tooling computes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::geometry::{rotated_iou, RotatedBox};

/// The COCO-style threshold sweep 0.50:0.05:0.95.
pub const COCO_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// A scored rotated detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: RotatedBox,
    pub class: usize,
    pub score: f64,
    pub image_id: u64,
}

/// An annotated ground-truth instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rect: RotatedBox,
    pub class: usize,
    pub difficult: bool,
    pub image_id: u64,
}

/// Greedy non-maximum suppression over detections of a single class.
///
/// Descending score order (ties by input index); a detection is dropped
/// when its IoU with any kept detection exceeds the threshold. Returns
/// survivors in descending score order.
pub fn rotated_nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let suppressed = kept
            .iter()
            .any(|k| rotated_iou(&k.rect, &detections[i].rect) > iou_threshold);
        if !suppressed {
            kept.push(detections[i].clone());
        }
    }
    kept
}

/// Average precision for one class at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    /// Non-difficult ground-truth count (the recall denominator).
    pub num_gts: usize,
    /// Set when there were no matchable ground truths; `ap` is then
    /// defined as zero.
    pub no_ground_truth: bool,
}

/// One point of the precision/recall curve, in detection rank order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

/// Sorts detections by descending score (ties by input index) and
/// greedily matches each to the unmatched ground truth of highest IoU at
/// or above the threshold, per image. Difficult ground truths are
/// removed up front: they are neither matchable nor counted.
fn match_detections(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
) -> (Vec<bool>, usize, Vec<usize>) {
    let gts: Vec<&GroundTruth> = ground_truths.iter().filter(|g| !g.difficult).collect();
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gt_matched = vec![false; gts.len()];
    let mut is_tp = vec![false; order.len()];
    for (rank, &di) in order.iter().enumerate() {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_matched[gi] || gt.image_id != det.image_id {
                continue;
            }
            let iou = rotated_iou(&det.rect, &gt.rect);
            if iou < iou_threshold {
                continue;
            }
            // Strictly greater keeps the lowest ground-truth index on ties.
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            gt_matched[gi] = true;
            is_tp[rank] = true;
        }
    }
    (is_tp, gts.len(), order)
}

/// All-point interpolated average precision for a single class.
pub fn average_precision(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
) -> ApResult {
    let (is_tp, num_gts, _) = match_detections(detections, ground_truths, iou_threshold);
    if num_gts == 0 {
        return ApResult { ap: 0.0, num_gts: 0, no_ground_truth: true };
    }
    let mut recalls = Vec::with_capacity(is_tp.len());
    let mut precisions = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (rank, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        recalls.push(tp as f64 / num_gts as f64);
        precisions.push(tp as f64 / (rank + 1) as f64);
    }
    ApResult { ap: envelope_area(&recalls, &precisions), num_gts, no_ground_truth: false }
}

/// Area under the monotone (non-increasing) precision envelope.
fn envelope_area(recalls: &[f64], precisions: &[f64]) -> f64 {
    let n = recalls.len();
    let mut envelope = precisions.to_vec();
    for i in (0..n.saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        ap += (recalls[i] - prev_recall) * envelope[i];
        prev_recall = recalls[i];
    }
    ap
}

/// The ranked `(recall, precision)` points behind [`average_precision`].
pub fn pr_report(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
) -> Vec<PrPoint> {
    let (is_tp, num_gts, order) = match_detections(detections, ground_truths, iou_threshold);
    let mut points = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (rank, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push(PrPoint {
            recall: if num_gts == 0 { 0.0 } else { tp as f64 / num_gts as f64 },
            precision: tp as f64 / (rank + 1) as f64,
            score: detections[order[rank]].score,
        });
    }
    points
}

/// Per-class APs across the COCO threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class: usize,
    pub num_gts: usize,
    /// AP at each of [`COCO_THRESHOLDS`]; index 0 is IoU 0.50, index 5
    /// is IoU 0.75.
    pub ap_by_threshold: Vec<f64>,
}

impl ClassEval {
    pub fn ap50(&self) -> f64 {
        self.ap_by_threshold[0]
    }

    pub fn ap75(&self) -> f64 {
        self.ap_by_threshold[5]
    }
}

/// Headline metrics plus the per-class table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_class: Vec<ClassEval>,
    /// Mean AP at IoU 0.50 over classes with ground truth.
    pub map_dota: f64,
    /// Mean AP at IoU 0.75.
    pub ap75: f64,
    /// Mean AP over the 0.50:0.05:0.95 sweep.
    pub map_coco: f64,
}

/// Evaluates detections against ground truths for `num_classes` classes.
/// Headline means run over classes that have at least one non-difficult
/// ground truth.
pub fn evaluate(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    num_classes: usize,
) -> EvalResult {
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let dets: Vec<Detection> =
            detections.iter().filter(|d| d.class == class).cloned().collect();
        let gts: Vec<GroundTruth> =
            ground_truths.iter().filter(|g| g.class == class).cloned().collect();
        let ap_by_threshold: Vec<f64> = COCO_THRESHOLDS
            .iter()
            .map(|&thr| average_precision(&dets, &gts, thr).ap)
            .collect();
        let num_gts = gts.iter().filter(|g| !g.difficult).count();
        per_class.push(ClassEval { class, num_gts, ap_by_threshold });
    }
    let scored: Vec<&ClassEval> = per_class.iter().filter(|c| c.num_gts > 0).collect();
    let mean = |f: &dyn Fn(&ClassEval) -> f64| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|c| f(c)).sum::<f64>() / scored.len() as f64
        }
    };
    EvalResult {
        map_dota: mean(&|c| c.ap50()),
        ap75: mean(&|c| c.ap75()),
        map_coco: mean(&|c| {
            c.ap_by_threshold.iter().sum::<f64>() / c.ap_by_threshold.len() as f64
        }),
        per_class,
    }
}

/// Classes present in either list; handy for report tables.
pub fn observed_classes(detections: &[Detection], ground_truths: &[GroundTruth]) -> Vec<usize> {
    let mut set = BTreeSet::new();
    set.extend(detections.iter().map(|d| d.class));
    set.extend(ground_truths.iter().map(|g| g.class));
    set.into_iter().collect()
}
