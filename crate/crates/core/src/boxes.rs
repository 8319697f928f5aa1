//! Axis-aligned boxes, IoU, greedy NMS and the deterministic pre-NMS sort.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x2 >= self.x1 && self.y2 >= self.y1
    }
}

/// Intersection over union; `0.0` when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Visiting order for candidates whose scores are exactly equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NmsOrder {
    /// Ties keep their incoming order.
    #[default]
    Stable,
    /// Ties are visited in reverse incoming order. This is a deterministic
    /// stand-in for a kernel whose tie order is unspecified.
    Unstable,
}

impl NmsOrder {
    pub fn name(self) -> &'static str {
        match self {
            Self::Stable => "stable",
            Self::Unstable => "unstable",
        }
    }
}

/// Permutation ordering candidates by score descending, then `x1`, `y1`
/// ascending, then original index.
pub fn pre_nms_sort(boxes: &[BoundingBox], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(boxes[a].x1.total_cmp(&boxes[b].x1))
            .then(boxes[a].y1.total_cmp(&boxes[b].y1))
            .then(a.cmp(&b))
    });
    order
}

fn visit_order(scores: &[f64], order: NmsOrder, pre_sorted: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // stable sort: ties stay in incoming order
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Pre-sorted input already carries a total order, so there is nothing
    // left for the tie policy to decide.
    if order == NmsOrder::Unstable && !pre_sorted {
        let mut start = 0;
        while start < idx.len() {
            let mut end = start + 1;
            while end < idx.len() && scores[idx[end]].total_cmp(&scores[idx[start]]) == Ordering::Equal {
                end += 1;
            }
            idx[start..end].reverse();
            start = end;
        }
    }
    idx
}

/// Greedy NMS. Returns kept candidate indices in visiting order.
///
/// A candidate is suppressed when its IoU with an already kept box is
/// strictly greater than `iou_threshold`.
pub fn nms(
    boxes: &[BoundingBox],
    scores: &[f64],
    iou_threshold: f64,
    order: NmsOrder,
    pre_sorted: bool,
) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(shape_err!("nms: {} boxes but {} scores", boxes.len(), scores.len()));
    }
    if let Some(i) = boxes.iter().position(|b| !b.is_well_formed()) {
        return Err(shape_err!("nms: malformed box {i}: {:?}", boxes[i]));
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(shape_err!("nms: iou_threshold {iou_threshold} outside [0, 1]"));
    }
    let mut kept: Vec<usize> = Vec::new();
    for cand in visit_order(scores, order, pre_sorted) {
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[cand]) <= iou_threshold) {
            kept.push(cand);
        }
    }
    Ok(kept)
}
