//! Three-tier verification: tensor closeness, earliest divergence over
//! activation traces, and task-level agreement, plus failure attribution.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::NodeActivation;
use crate::boxes::{iou, pre_nms_sort, BoundingBox};
use crate::compare::{allclose, compute_diff_stats, CloseMode, DiffStats, ToleranceSpec};
use crate::error::{shape_err, Error, Result};
use crate::graph::{infer_shapes, GraphModel, OpKind, TaskKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FailureCategory {
    None,
    NumericDrift,
    OrderTiebreak,
    UnsupportedOp,
    RuntimeError,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 5] =
        [Self::None, Self::NumericDrift, Self::OrderTiebreak, Self::UnsupportedOp, Self::RuntimeError];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "NONE",
            Self::NumericDrift => "NUMERIC_DRIFT",
            Self::OrderTiebreak => "ORDER_TIEBREAK",
            Self::UnsupportedOp => "UNSUPPORTED_OP",
            Self::RuntimeError => "RUNTIME_ERROR",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Fail,
    Error,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::Error => "ERROR",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Pass, Self::Fail, Self::Error].into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tier1Result {
    /// Worst case over every output that could be compared element by
    /// element. `None` when no output had matching non-empty shapes.
    pub stats: Option<DiffStats>,
    pub pass: bool,
    pub mode: CloseMode,
    /// Per output; `None` for a shape mismatch or an empty pair.
    pub per_output: Vec<Option<DiffStats>>,
}

/// Compares model outputs pairwise.
///
/// An output whose shapes differ (e.g. NMS keeping a different number of
/// boxes) fails without contributing statistics. Two empty tensors of the
/// same shape agree.
pub fn tier1_compare(
    reference: &[&Tensor],
    target: &[&Tensor],
    tol: ToleranceSpec,
    mode: CloseMode,
) -> Result<Tier1Result> {
    if reference.len() != target.len() {
        return Err(shape_err!("reference produced {} outputs, target {}", reference.len(), target.len()));
    }
    let mut pass = true;
    let mut stats: Option<DiffStats> = None;
    let mut per_output = Vec::with_capacity(reference.len());
    for (r, t) in reference.iter().zip(target) {
        if r.shape() != t.shape() {
            pass = false;
            per_output.push(None);
            continue;
        }
        if r.numel() == 0 {
            per_output.push(None);
            continue;
        }
        let s = compute_diff_stats(r, t)?;
        pass &= allclose(r, t, tol, mode)?;
        stats = Some(match stats {
            Some(acc) => acc.worst_of(&s),
            None => s,
        });
        per_output.push(Some(s));
    }
    Ok(Tier1Result { stats, pass, mode, per_output })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub node_id: String,
    pub node_index: usize,
    /// `None` when the two activations do not even share a shape.
    pub max_abs_diff: Option<f64>,
}

/// First node, in topological order, whose activations violate closeness.
pub fn tier2_localize(
    reference: &[NodeActivation],
    target: &[NodeActivation],
    tol: ToleranceSpec,
    mode: CloseMode,
) -> Result<Option<Divergence>> {
    if reference.len() != target.len() || reference.iter().zip(target).any(|(r, t)| r.node_id != t.node_id) {
        return Err(Error::Graph("activation traces cover different node sequences".into()));
    }
    for (i, (r, t)) in reference.iter().zip(target).enumerate() {
        if r.tensor.shape() != t.tensor.shape() {
            return Ok(Some(Divergence { node_id: r.node_id.clone(), node_index: i, max_abs_diff: None }));
        }
        if r.tensor.numel() == 0 {
            continue;
        }
        if !allclose(&r.tensor, &t.tensor, tol, mode)? {
            let stats = compute_diff_stats(&r.tensor, &t.tensor)?;
            return Ok(Some(Divergence {
                node_id: r.node_id.clone(),
                node_index: i,
                max_abs_diff: Some(stats.max_abs_diff),
            }));
        }
    }
    Ok(None)
}

/// Indices of the `k` largest values, ties toward the lower index.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Returns `(top1 equal, |topk(ref) ∩ topk(tgt)| / k)`.
pub fn topk_agreement(reference: &[f64], target: &[f64], k: usize) -> Result<(bool, f64)> {
    if reference.len() != target.len() {
        return Err(shape_err!("logit vectors of length {} and {}", reference.len(), target.len()));
    }
    if k == 0 || k > reference.len() {
        return Err(Error::InvalidConfig(format!("top-k with k={k} over {} logits", reference.len())));
    }
    let r = top_k_indices(reference, k);
    let t = top_k_indices(target, k);
    let shared = r.iter().filter(|i| t.contains(i)).count();
    Ok((r[0] == t[0], shared as f64 / k as f64))
}

fn label_of(v: f64, num_classes: usize) -> Result<usize> {
    if v >= 0.0 && libm::trunc(v) == v && (v as usize) < num_classes {
        Ok(v as usize)
    } else {
        Err(Error::InvalidConfig(format!("label {v} outside 0..{num_classes}")))
    }
}

/// Mean IoU over classes present in either mask. Two masks with no labels
/// at all score 1.0.
pub fn miou(reference: &[f64], target: &[f64], num_classes: usize) -> Result<f64> {
    if reference.len() != target.len() {
        return Err(shape_err!("masks of {} and {} pixels", reference.len(), target.len()));
    }
    let mut inter = alloc::vec![0usize; num_classes];
    let mut union = alloc::vec![0usize; num_classes];
    for (&r, &t) in reference.iter().zip(target) {
        let (r, t) = (label_of(r, num_classes)?, label_of(t, num_classes)?);
        if r == t {
            inter[r] += 1;
            union[r] += 1;
        } else {
            union[r] += 1;
            union[t] += 1;
        }
    }
    let present: Vec<f64> =
        inter.iter().zip(&union).filter(|(_, &u)| u > 0).map(|(&i, &u)| i as f64 / u as f64).collect();
    if present.is_empty() {
        return Ok(1.0);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Reads the `(K, 5)` rows `x1, y1, x2, y2, score` emitted by an Nms node.
pub fn detections_from_tensor(t: &Tensor) -> Result<Vec<Detection>> {
    if t.rank() != 2 || t.shape()[1] != 5 {
        return Err(shape_err!("detections must be (K, 5), got {:?}", t.shape()));
    }
    let v = t.to_f64_vec();
    Ok(v.chunks_exact(5).map(|r| Detection { bbox: BoundingBox::new(r[0], r[1], r[2], r[3]), score: r[4] }).collect())
}

/// Symmetric F1 between two detection sets under greedy one-to-one matching.
///
/// Reference detections are visited by descending score; each takes the
/// unmatched target with the highest IoU, provided it reaches `match_iou`.
pub fn detection_f1(reference: &[Detection], target: &[Detection], match_iou: f64) -> f64 {
    if reference.is_empty() && target.is_empty() {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by(|&a, &b| reference[b].score.total_cmp(&reference[a].score));
    let mut taken = alloc::vec![false; target.len()];
    let mut matches = 0usize;
    for r in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in target.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = iou(&reference[r].bbox, &t.bbox);
            if v >= match_iou && best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            matches += 1;
        }
    }
    2.0 * matches as f64 / (reference.len() + target.len()) as f64
}

/// Whether two detection sets hold the same `(box, score)` rows in some
/// order, each coordinate within `atol + rtol * |ref|`.
pub fn detections_equal_unordered(reference: &[Detection], target: &[Detection], tol: ToleranceSpec) -> bool {
    if reference.len() != target.len() {
        return false;
    }
    let canonical = |d: &[Detection]| -> Vec<Detection> {
        let boxes: Vec<BoundingBox> = d.iter().map(|x| x.bbox).collect();
        let scores: Vec<f64> = d.iter().map(|x| x.score).collect();
        pre_nms_sort(&boxes, &scores).into_iter().map(|i| d[i]).collect()
    };
    let close = |r: f64, t: f64| (r - t).abs() <= tol.atol + tol.rtol * r.abs();
    canonical(reference).iter().zip(&canonical(target)).all(|(r, t)| {
        close(r.score, t.score)
            && close(r.bbox.x1, t.bbox.x1)
            && close(r.bbox.y1, t.bbox.y1)
            && close(r.bbox.x2, t.bbox.x2)
            && close(r.bbox.y2, t.bbox.y2)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskThresholds {
    pub require_top1: bool,
    pub topk: usize,
    pub topk_min: f64,
    pub miou_min: f64,
    pub detection_f1_min: f64,
    pub match_iou: f64,
}

impl Default for TaskThresholds {
    fn default() -> Self {
        Self { require_top1: true, topk: 5, topk_min: 0.8, miou_min: 0.99, detection_f1_min: 1.0, match_iou: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub task: TaskKind,
    pub top1_match: Option<bool>,
    pub topk_agreement: Option<f64>,
    pub miou: Option<f64>,
    pub detection_f1: Option<f64>,
    pub pass: bool,
}

impl TaskMetrics {
    fn empty(task: TaskKind) -> Self {
        Self { task, top1_match: None, topk_agreement: None, miou: None, detection_f1: None, pass: false }
    }
}

/// Number of label classes feeding the model's first output, for
/// segmentation models ending in ArgmaxChannel.
pub fn segmentation_classes(model: &GraphModel) -> Result<usize> {
    let out = model.outputs.first().ok_or_else(|| Error::Graph("model declares no outputs".into()))?;
    let node = model
        .nodes
        .iter()
        .find(|n| &n.output == out && n.op == OpKind::ArgmaxChannel)
        .ok_or_else(|| Error::Graph(format!("output {out} is not an ArgmaxChannel label mask")))?;
    let shapes = infer_shapes(model)?;
    Ok(shapes[&node.inputs[0]][1])
}

/// Task-level agreement on the first model output.
///
/// Classification compares each batch row's scores; all rows must agree on
/// top-1 and the mean top-k overlap must reach the threshold.
pub fn tier3_evaluate(
    task: TaskKind,
    reference: &Tensor,
    target: &Tensor,
    thresholds: &TaskThresholds,
    num_classes: usize,
) -> Result<TaskMetrics> {
    let mut m = TaskMetrics::empty(task);
    match task {
        TaskKind::Classification => {
            if reference.shape() != target.shape() || reference.rank() != 2 {
                return Err(shape_err!("classification outputs {:?} vs {:?}", reference.shape(), target.shape()));
            }
            let (rows, width) = (reference.shape()[0], reference.shape()[1]);
            let (r, t) = (reference.to_f64_vec(), target.to_f64_vec());
            let k = thresholds.topk.min(width);
            let mut all_top1 = true;
            let mut overlap = 0.0;
            for i in 0..rows {
                let span = i * width..(i + 1) * width;
                let (top1, frac) = topk_agreement(&r[span.clone()], &t[span], k)?;
                all_top1 &= top1;
                overlap += frac;
            }
            let frac = if rows == 0 { 1.0 } else { overlap / rows as f64 };
            m.top1_match = Some(all_top1);
            m.topk_agreement = Some(frac);
            m.pass = (all_top1 || !thresholds.require_top1) && frac >= thresholds.topk_min;
        }
        TaskKind::Segmentation => {
            if reference.shape() != target.shape() {
                return Err(shape_err!("segmentation masks {:?} vs {:?}", reference.shape(), target.shape()));
            }
            let v = miou(&reference.to_f64_vec(), &target.to_f64_vec(), num_classes)?;
            m.miou = Some(v);
            m.pass = v >= thresholds.miou_min;
        }
        TaskKind::Detection => {
            let f1 = detection_f1(
                &detections_from_tensor(reference)?,
                &detections_from_tensor(target)?,
                thresholds.match_iou,
            );
            m.detection_f1 = Some(f1);
            m.pass = f1 >= thresholds.detection_f1_min;
        }
    }
    Ok(m)
}

/// Everything the failure taxonomy looks at.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailureEvidence<'a> {
    pub error: Option<&'a Error>,
    pub tier1_pass: bool,
    pub tier3_pass: Option<bool>,
    /// The earliest divergence sits on a node where a fallback fired.
    pub divergence_at_fallback: bool,
    /// Detection only: kept sets agree as unordered sets within tolerance.
    pub detections_equal_unordered: bool,
    /// Detection only: rerunning both sides with the deterministic pre-NMS
    /// sort passes the task tier.
    pub sorted_retry_passes: bool,
}

/// Attributes a check to exactly one category. Rules are tried in order:
/// runtime error, unsupported op, order/tie-break, numeric drift.
pub fn classify_failure(ev: &FailureEvidence<'_>) -> FailureCategory {
    match ev.error {
        Some(Error::UnsupportedOp(_)) => return FailureCategory::UnsupportedOp,
        Some(_) => return FailureCategory::RuntimeError,
        None => {}
    }
    let tier3_fail = ev.tier3_pass == Some(false);
    if ev.tier1_pass && !tier3_fail {
        return FailureCategory::None;
    }
    if ev.divergence_at_fallback {
        return FailureCategory::UnsupportedOp;
    }
    if (!ev.tier1_pass && ev.detections_equal_unordered) || (tier3_fail && ev.sorted_retry_passes) {
        return FailureCategory::OrderTiebreak;
    }
    FailureCategory::NumericDrift
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub tier1: Tier1Result,
    pub tier2: Option<Divergence>,
    pub tier3: Option<TaskMetrics>,
    pub taxonomy: FailureCategory,
    pub status: Status,
}

impl VerificationReport {
    pub fn new(
        tier1: Tier1Result,
        tier2: Option<Divergence>,
        tier3: Option<TaskMetrics>,
        taxonomy: FailureCategory,
    ) -> Self {
        let pass = tier1.pass && tier3.map_or(true, |m| m.pass);
        let status = if pass { Status::Pass } else { Status::Fail };
        Self { tier1, tier2, tier3, taxonomy: if pass { FailureCategory::None } else { taxonomy }, status }
    }
}
