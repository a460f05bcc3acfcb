//! Anchor lattice generation and max-IoU hard-target assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode_deltas, rotated_iou, Deltas, RotatedBox};

/// A prior box on the feature lattice. Generated axis-aligned; the angle
/// is regressed, not enumerated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub rect: RotatedBox,
    /// Index into the stride list the anchor was generated for.
    pub level: usize,
    /// Flat position in the deterministic generation order.
    pub index: usize,
}

/// Per-anchor assignment outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnchorLabel {
    /// Matched to ground truth `gt` with category `class`.
    Positive { gt: usize, class: usize },
    Negative,
    Ignore,
}

/// Labels plus encoded regression targets for the positive anchors.
#[derive(Debug, Clone)]
pub struct AssignmentResult {
    pub labels: Vec<AnchorLabel>,
    /// `Some(deltas)` exactly where the label is positive.
    pub reg_targets: Vec<Option<Deltas>>,
}

impl AssignmentResult {
    pub fn num_positive(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, AnchorLabel::Positive { .. }))
            .count()
    }
}

/// Generates the anchor list for an `image_size x image_size` image.
///
/// Ordering is deterministic: stride-major, then row-major over lattice
/// cells, then scale, then ratio (ratio varies fastest). One anchor is
/// centered on every cell for every (scale, ratio) pair, with side
/// `stride * scale` and aspect `ratio = w / h` at equal area.
pub fn generate_anchors(
    image_size: usize,
    strides: &[usize],
    scales: &[f64],
    ratios: &[f64],
) -> Result<Vec<Anchor>> {
    if strides.is_empty() || scales.is_empty() || ratios.is_empty() {
        return Err(Error::InvalidConfig(
            "anchor config needs at least one stride, scale, and ratio".into(),
        ));
    }
    for &s in strides {
        if s == 0 || image_size % s != 0 {
            return Err(Error::InvalidConfig(format!(
                "stride {s} does not divide image size {image_size}"
            )));
        }
    }
    let mut anchors = Vec::new();
    for (level, &stride) in strides.iter().enumerate() {
        let cells = image_size / stride;
        for gy in 0..cells {
            for gx in 0..cells {
                let cx = (gx as f64 + 0.5) * stride as f64;
                let cy = (gy as f64 + 0.5) * stride as f64;
                for &scale in scales {
                    for &ratio in ratios {
                        let side = stride as f64 * scale;
                        let w = side * ratio.sqrt();
                        let h = side / ratio.sqrt();
                        let index = anchors.len();
                        anchors.push(Anchor {
                            rect: RotatedBox::new(cx, cy, w, h, 0.0),
                            level,
                            index,
                        });
                    }
                }
            }
        }
    }
    Ok(anchors)
}

/// Max-IoU assignment with a forced positive for every ground truth.
///
/// An anchor is positive toward its highest-IoU ground truth when that
/// IoU reaches `iou_pos`, negative below `iou_neg`, and ignored in
/// between. Each ground truth additionally claims its best anchor so no
/// object goes unsupervised. Ties break toward the lowest ground-truth
/// index, making the result invariant to permutations of the input list.
pub fn assign(
    anchors: &[Anchor],
    gt_boxes: &[RotatedBox],
    gt_classes: &[usize],
    iou_pos: f64,
    iou_neg: f64,
) -> Result<AssignmentResult> {
    if iou_neg > iou_pos {
        return Err(Error::InvalidConfig(format!(
            "iou_neg {iou_neg} must not exceed iou_pos {iou_pos}"
        )));
    }
    if gt_boxes.len() != gt_classes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ground-truth boxes but {} classes",
            gt_boxes.len(),
            gt_classes.len()
        )));
    }
    let n = anchors.len();
    if gt_boxes.is_empty() {
        return Ok(AssignmentResult {
            labels: vec![AnchorLabel::Negative; n],
            reg_targets: vec![None; n],
        });
    }

    // IoU of every anchor against every ground truth.
    let mut best_gt = vec![0usize; n];
    let mut best_iou = vec![0.0f64; n];
    let mut gt_best_anchor = vec![0usize; gt_boxes.len()];
    let mut gt_best_iou = vec![-1.0f64; gt_boxes.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        for (g, gt) in gt_boxes.iter().enumerate() {
            let iou = rotated_iou(&anchor.rect, gt);
            if iou > best_iou[a] {
                best_iou[a] = iou;
                best_gt[a] = g;
            }
            if iou > gt_best_iou[g] {
                gt_best_iou[g] = iou;
                gt_best_anchor[g] = a;
            }
        }
    }

    let mut labels = vec![AnchorLabel::Negative; n];
    for a in 0..n {
        labels[a] = if best_iou[a] >= iou_pos {
            AnchorLabel::Positive { gt: best_gt[a], class: gt_classes[best_gt[a]] }
        } else if best_iou[a] < iou_neg {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }

    // Force-match each ground truth to its best anchor. When one anchor is
    // the best for several ground truths, the highest IoU wins and equal
    // IoUs keep the lowest index.
    let mut forced: Vec<Option<(usize, f64)>> = vec![None; n];
    for g in 0..gt_boxes.len() {
        let a = gt_best_anchor[g];
        let replace = match forced[a] {
            None => true,
            Some((_, iou)) => gt_best_iou[g] > iou,
        };
        if replace {
            forced[a] = Some((g, gt_best_iou[g]));
        }
    }
    for a in 0..n {
        if let Some((g, _)) = forced[a] {
            labels[a] = AnchorLabel::Positive { gt: g, class: gt_classes[g] };
        }
    }

    let reg_targets = labels
        .iter()
        .enumerate()
        .map(|(a, label)| match label {
            AnchorLabel::Positive { gt, .. } => {
                Some(encode_deltas(&anchors[a].rect, &gt_boxes[*gt]))
            }
            _ => None,
        })
        .collect();

    Ok(AssignmentResult { labels, reg_targets })
}
