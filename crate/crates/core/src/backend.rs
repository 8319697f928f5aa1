//! Execution backends.
//!
//! A backend is a [`BackendSpec`] driving one graph interpreter. The
//! reference spec is strict (sequential reductions, full precision, no
//! fusion, stable NMS). The optimized spec may reorder reductions, round
//! node outputs to binary16, elide the rounding between a fused Conv2d and
//! Relu, and visit tied NMS candidates in a different order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::boxes::NmsOrder;
use crate::error::{shape_err, Error, Result};
use crate::graph::{GraphModel, OpKind};
use crate::kernels::{eval_node, KernelSemantics};
use crate::precision::round_slice_to_half;
use crate::reduce::ReductionOrder;
use crate::tensor::Tensor;

/// Monotonic time source, injected so the core stays free of OS clocks.
pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// A clock that never advances; latencies come out as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ns(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Reference,
    Optimized,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Reference => "reference",
            Self::Optimized => "optimized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    #[default]
    Full,
    Reduced,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Reduced => "reduced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MitigationSet {
    /// Sort candidates by (score desc, x1, y1, index) before NMS.
    pub pre_nms_sort: bool,
    pub force_full_precision: bool,
    /// Ops evaluated with reference semantics inside an optimized backend.
    pub eager_fallback_ops: BTreeSet<OpKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendSpec {
    pub name: String,
    pub kind: BackendKind,
    pub precision: Precision,
    pub reduction_order: ReductionOrder,
    pub fuse_conv_relu: bool,
    pub nms_order: NmsOrder,
    pub mitigations: MitigationSet,
}

impl BackendSpec {
    pub fn reference() -> Self {
        Self {
            name: "reference".into(),
            kind: BackendKind::Reference,
            precision: Precision::Full,
            reduction_order: ReductionOrder::Sequential,
            fuse_conv_relu: false,
            nms_order: NmsOrder::Stable,
            mitigations: MitigationSet::default(),
        }
    }

    /// Default optimized spec: pairwise reductions, conv+relu fusion and
    /// unstable NMS tie order at full precision.
    pub fn optimized() -> Self {
        Self {
            name: "optimized".into(),
            kind: BackendKind::Optimized,
            precision: Precision::Full,
            reduction_order: ReductionOrder::Pairwise,
            fuse_conv_relu: true,
            nms_order: NmsOrder::Unstable,
            mitigations: MitigationSet::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Reference
            && (self.precision != Precision::Full
                || self.reduction_order != ReductionOrder::Sequential
                || self.fuse_conv_relu
                || self.nms_order != NmsOrder::Stable)
        {
            return Err(Error::InvalidConfig(format!(
                "backend {}: reference kind requires full precision, sequential reduction, \
                 no fusion and stable NMS",
                self.name
            )));
        }
        Ok(())
    }

    pub fn effective_precision(&self) -> Precision {
        if self.mitigations.force_full_precision {
            Precision::Full
        } else {
            self.precision
        }
    }

    fn falls_back(&self, op: OpKind) -> bool {
        self.kind == BackendKind::Optimized && self.mitigations.eager_fallback_ops.contains(&op)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeActivation {
    pub node_id: String,
    pub op: OpKind,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FallbackEvent {
    pub node_id: String,
    pub op: OpKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    /// Model outputs in declaration order, from the first repeat.
    pub outputs: Vec<(String, Tensor)>,
    /// Every node output in topological order, when capture was requested.
    pub activations: Option<Vec<NodeActivation>>,
    pub latencies_ms: Vec<f64>,
    pub fallback_events: Vec<FallbackEvent>,
    /// Node outputs rounded to binary16 during the first repeat.
    pub half_roundings: usize,
}

impl ExecutionTrace {
    pub fn output(&self, name: &str) -> Option<&Tensor> {
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn output_tensors(&self) -> Vec<&Tensor> {
        self.outputs.iter().map(|(_, t)| t).collect()
    }

    /// Median latency, dropping the first repeat when `warmup` is set and
    /// more than one repeat was taken.
    pub fn median_latency_ms(&self, warmup: bool) -> Option<f64> {
        let lat = if warmup && self.latencies_ms.len() > 1 { &self.latencies_ms[1..] } else { &self.latencies_ms[..] };
        measure_latency(lat)
    }
}

/// Lower median of `latencies` (for even counts the smaller middle value).
pub fn measure_latency(latencies: &[f64]) -> Option<f64> {
    if latencies.is_empty() {
        return None;
    }
    let mut v = latencies.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    pub capture_activations: bool,
    pub repeats: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self { capture_activations: false, repeats: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
struct NodePlan {
    sem: KernelSemantics,
    round: bool,
    fallback: bool,
}

fn plan_nodes(model: &GraphModel, spec: &BackendSpec) -> Vec<NodePlan> {
    let reduced = spec.effective_precision() == Precision::Reduced;
    model
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let fallback = spec.falls_back(node.op);
            let sem = if fallback {
                KernelSemantics { pre_nms_sort: spec.mitigations.pre_nms_sort, ..KernelSemantics::REFERENCE }
            } else {
                KernelSemantics {
                    reduction: spec.reduction_order,
                    nms_order: spec.nms_order,
                    pre_nms_sort: spec.mitigations.pre_nms_sort,
                }
            };
            let fused_into_next = spec.fuse_conv_relu
                && node.op == OpKind::Conv2d
                && model
                    .nodes
                    .get(i + 1)
                    .is_some_and(|next| next.op == OpKind::Relu && next.inputs.first() == Some(&node.output));
            NodePlan { sem, round: reduced && !fallback && !fused_into_next, fallback }
        })
        .collect()
}

/// Runs `model` under `spec` `opts.repeats` times and returns the first
/// repeat's outputs together with every repeat's wall-clock latency.
pub fn execute(
    model: &GraphModel,
    inputs: &BTreeMap<String, Tensor>,
    spec: &BackendSpec,
    opts: ExecOptions,
    clock: &dyn Clock,
) -> Result<ExecutionTrace> {
    spec.validate()?;
    if opts.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    let mut bound: BTreeMap<&str, Tensor> = BTreeMap::new();
    for input in &model.inputs {
        let t = inputs.get(&input.name).ok_or_else(|| Error::Graph(format!("missing model input {}", input.name)))?;
        if t.shape() != input.shape.as_slice() {
            return Err(shape_err!("input {} has shape {:?}, model expects {:?}", input.name, t.shape(), input.shape));
        }
        bound.insert(&input.name, t.to_f32());
    }
    for (name, t) in &model.initializers {
        bound.insert(name, t.to_f32());
    }
    let producer: BTreeMap<&str, usize> = model.nodes.iter().enumerate().map(|(i, n)| (n.output.as_str(), i)).collect();
    let plans = plan_nodes(model, spec);

    let mut trace = ExecutionTrace {
        outputs: Vec::new(),
        activations: None,
        latencies_ms: Vec::with_capacity(opts.repeats),
        fallback_events: Vec::new(),
        half_roundings: 0,
    };
    for repeat in 0..opts.repeats {
        let first = repeat == 0;
        let start = clock.now_ns();
        let mut produced: Vec<Tensor> = Vec::with_capacity(model.nodes.len());
        for (node, plan) in model.nodes.iter().zip(&plans) {
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|name| match producer.get(name.as_str()) {
                    Some(&i) if i < produced.len() => Ok(&produced[i]),
                    _ => bound.get(name.as_str()).ok_or_else(|| Error::Graph(format!("unresolved tensor {name}"))),
                })
                .collect::<Result<_>>()?;
            let mut out = eval_node(node, &args, plan.sem)?;
            if plan.round {
                if let Some(data) = out.as_f32_mut() {
                    round_slice_to_half(data);
                }
                if first {
                    trace.half_roundings += 1;
                }
            }
            if first && plan.fallback {
                trace.fallback_events.push(FallbackEvent { node_id: node.id.clone(), op: node.op });
            }
            produced.push(out);
        }
        let elapsed = clock.now_ns().saturating_sub(start);
        trace.latencies_ms.push(elapsed as f64 / 1e6);
        if first {
            trace.outputs = model
                .outputs
                .iter()
                .map(|name| {
                    let t = match producer.get(name.as_str()) {
                        Some(&i) => produced[i].clone(),
                        None => bound[name.as_str()].clone(),
                    };
                    (name.clone(), t)
                })
                .collect();
            if opts.capture_activations {
                trace.activations = Some(
                    model
                        .nodes
                        .iter()
                        .zip(produced)
                        .map(|(n, t)| NodeActivation { node_id: n.id.clone(), op: n.op, tensor: t })
                        .collect(),
                );
            }
        }
    }
    Ok(trace)
}
