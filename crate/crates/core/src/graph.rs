//! Operator-graph model representation, validation and shape inference.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{numel_of, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Classification,
    Segmentation,
    Detection,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Classification => "classification",
            Self::Segmentation => "segmentation",
            Self::Detection => "detection",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "classification" => Some(Self::Classification),
            "segmentation" => Some(Self::Segmentation),
            "detection" => Some(Self::Detection),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Conv2d,
    Linear,
    Relu,
    Add,
    Concat,
    MaxPool2d,
    GlobalAvgPool,
    BatchNormAffine,
    Softmax,
    Flatten,
    BilinearResize,
    ArgmaxChannel,
    Nms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AttrType {
    Int,
    Float,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        Self::Conv2d,
        Self::Linear,
        Self::Relu,
        Self::Add,
        Self::Concat,
        Self::MaxPool2d,
        Self::GlobalAvgPool,
        Self::BatchNormAffine,
        Self::Softmax,
        Self::Flatten,
        Self::BilinearResize,
        Self::ArgmaxChannel,
        Self::Nms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Conv2d => "Conv2d",
            Self::Linear => "Linear",
            Self::Relu => "Relu",
            Self::Add => "Add",
            Self::Concat => "Concat",
            Self::MaxPool2d => "MaxPool2d",
            Self::GlobalAvgPool => "GlobalAvgPool",
            Self::BatchNormAffine => "BatchNormAffine",
            Self::Softmax => "Softmax",
            Self::Flatten => "Flatten",
            Self::BilinearResize => "BilinearResize",
            Self::ArgmaxChannel => "ArgmaxChannel",
            Self::Nms => "Nms",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == name)
    }

    /// Ops whose kernels contain a floating-point reduction.
    pub fn has_reduction(self) -> bool {
        matches!(self, Self::Conv2d | Self::Linear | Self::GlobalAvgPool | Self::Softmax)
    }

    fn attr_schema(self) -> &'static [(&'static str, AttrType)] {
        match self {
            Self::Conv2d => &[("stride", AttrType::Int), ("padding", AttrType::Int)],
            Self::MaxPool2d => &[("kernel", AttrType::Int), ("stride", AttrType::Int)],
            Self::Concat | Self::Softmax => &[("axis", AttrType::Int)],
            Self::BilinearResize => &[("out_h", AttrType::Int), ("out_w", AttrType::Int)],
            Self::Nms => &[("iou_threshold", AttrType::Float)],
            _ => &[],
        }
    }

    /// Allowed input counts (min, max).
    fn arity(self) -> (usize, usize) {
        match self {
            Self::Conv2d | Self::Linear | Self::BatchNormAffine => (3, 3),
            Self::Add | Self::Nms => (2, 2),
            Self::Concat => (1, usize::MAX),
            _ => (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
}

impl AttrValue {
    pub fn as_f64(self) -> f64 {
        match self {
            Self::Int(v) => v as f64,
            Self::Float(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub output: String,
    pub attrs: BTreeMap<String, AttrValue>,
}

impl Node {
    pub fn new(id: &str, op: OpKind, inputs: &[&str], output: &str) -> Self {
        Self {
            id: id.to_string(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.to_string(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn attr_usize(&self, key: &str) -> Result<usize> {
        match self.attrs.get(key) {
            Some(AttrValue::Int(v)) if *v >= 0 => Ok(*v as usize),
            Some(other) => {
                Err(Error::Graph(format!("node {}: attr {key} must be a non-negative integer, got {other:?}", self.id)))
            }
            None => Err(Error::Graph(format!("node {}: missing attr {key}", self.id))),
        }
    }

    pub fn attr_f64(&self, key: &str) -> Result<f64> {
        self.attrs
            .get(key)
            .map(|v| v.as_f64())
            .ok_or_else(|| Error::Graph(format!("node {}: missing attr {key}", self.id)))
    }

    fn validate_attrs(&self) -> Result<()> {
        let schema = self.op.attr_schema();
        for key in self.attrs.keys() {
            if !schema.iter().any(|(name, _)| name == key) {
                return Err(Error::Graph(format!("node {}: unexpected attr {key} for {}", self.id, self.op.name())));
            }
        }
        for (name, ty) in schema {
            match (self.attrs.get(*name), ty) {
                (None, _) => {
                    return Err(Error::Graph(format!("node {}: missing attr {name} for {}", self.id, self.op.name())))
                }
                (Some(AttrValue::Float(_)), AttrType::Int) => {
                    return Err(Error::Graph(format!("node {}: attr {name} must be an integer", self.id)))
                }
                (Some(AttrValue::Int(v)), AttrType::Int) if *v < 0 => {
                    return Err(Error::Graph(format!("node {}: attr {name} must be >= 0", self.id)))
                }
                _ => {}
            }
        }
        match self.op {
            OpKind::Conv2d if self.attr_usize("stride")? == 0 => {
                Err(Error::Graph(format!("node {}: stride must be >= 1", self.id)))
            }
            OpKind::MaxPool2d if self.attr_usize("kernel")? == 0 => {
                Err(Error::Graph(format!("node {}: kernel must be >= 1", self.id)))
            }
            OpKind::Nms => {
                let t = self.attr_f64("iou_threshold")?;
                if (0.0..=1.0).contains(&t) {
                    Ok(())
                } else {
                    Err(Error::Graph(format!("node {}: iou_threshold {t} outside [0, 1]", self.id)))
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A topologically ordered operator graph with fixed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    pub name: String,
    pub task: TaskKind,
    pub inputs: Vec<GraphInput>,
    pub outputs: Vec<String>,
    pub nodes: Vec<Node>,
    pub initializers: BTreeMap<String, Tensor>,
}

impl GraphModel {
    /// Checks naming, topology and attribute schemas, then runs shape
    /// inference.
    pub fn validate(&self) -> Result<BTreeMap<String, Vec<usize>>> {
        let mut defined: BTreeSet<&str> = BTreeSet::new();
        for input in &self.inputs {
            if !defined.insert(&input.name) {
                return Err(Error::Graph(format!("duplicate graph input {}", input.name)));
            }
        }
        for name in self.initializers.keys() {
            if !defined.insert(name) {
                return Err(Error::Graph(format!("initializer {name} shadows another tensor")));
            }
        }
        let mut ids = BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(Error::Graph(format!("duplicate node id {}", node.id)));
            }
            let (lo, hi) = node.op.arity();
            if node.inputs.len() < lo || node.inputs.len() > hi {
                return Err(Error::Graph(format!(
                    "node {}: {} takes {lo}..={hi} inputs, got {}",
                    node.id,
                    node.op.name(),
                    node.inputs.len()
                )));
            }
            for input in &node.inputs {
                if !defined.contains(input.as_str()) {
                    return Err(Error::Graph(format!("node {} consumes {input} before it is defined", node.id)));
                }
            }
            node.validate_attrs()?;
            if !defined.insert(&node.output) {
                return Err(Error::Graph(format!("node {} redefines tensor {}", node.id, node.output)));
            }
        }
        if self.outputs.is_empty() {
            return Err(Error::Graph("model declares no outputs".into()));
        }
        for out in &self.outputs {
            if !defined.contains(out.as_str()) {
                return Err(Error::Graph(format!("output {out} is never produced")));
            }
        }
        infer_shapes(self)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }
}

fn node_err(node: &Node, msg: impl core::fmt::Display) -> Error {
    Error::Shape(format!("node {} ({}): {msg}", node.id, node.op.name()))
}

/// Output extent of a strided window: `floor((len + 2*pad - k) / stride) + 1`.
pub fn window_extent(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(kernel).map(|span| span / stride + 1)
}

/// Shapes of every tensor in the graph.
///
/// The `Nms` output is `(N, 5)` where `N` is the candidate count; execution
/// yields `(K, 5)` with `K <= N` rows (one kept detection per row,
/// `x1, y1, x2, y2, score`).
pub fn infer_shapes(model: &GraphModel) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for input in &model.inputs {
        shapes.insert(input.name.clone(), input.shape.clone());
    }
    for (name, t) in &model.initializers {
        shapes.insert(name.clone(), t.shape().to_vec());
    }
    for node in &model.nodes {
        let ins: Vec<&[usize]> = node
            .inputs
            .iter()
            .map(|n| {
                shapes
                    .get(n)
                    .map(Vec::as_slice)
                    .ok_or_else(|| Error::Graph(format!("node {}: unknown tensor {n}", node.id)))
            })
            .collect::<Result<_>>()?;
        let out = infer_node(node, &ins)?;
        shapes.insert(node.output.clone(), out);
    }
    Ok(shapes)
}

pub(crate) fn infer_node(node: &Node, ins: &[&[usize]]) -> Result<Vec<usize>> {
    match node.op {
        OpKind::Conv2d => {
            let ([n, cin, h, w], [cout, wcin, kh, kw], [b]) =
                (to4(node, ins[0])?, to4(node, ins[1])?, to_array::<1>(node, ins[2])?);
            if cin != wcin || b != cout {
                return Err(node_err(node, format!("input {:?} / weight {:?} / bias {:?}", ins[0], ins[1], ins[2])));
            }
            let (s, p) = (node.attr_usize("stride")?, node.attr_usize("padding")?);
            let oh = window_extent(h, kh, s, p);
            let ow = window_extent(w, kw, s, p);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok(vec![n, cout, oh, ow]),
                _ => Err(node_err(node, "kernel larger than padded input")),
            }
        }
        OpKind::Linear => {
            let ([n, fin], [fout, wfin], [b]) =
                (to_array::<2>(node, ins[0])?, to_array::<2>(node, ins[1])?, to_array::<1>(node, ins[2])?);
            if fin != wfin || b != fout {
                return Err(node_err(node, format!("input {:?} / weight {:?} / bias {:?}", ins[0], ins[1], ins[2])));
            }
            Ok(vec![n, fout])
        }
        OpKind::Relu => Ok(ins[0].to_vec()),
        OpKind::Add => {
            if ins[0] != ins[1] {
                return Err(node_err(node, format!("{:?} + {:?}", ins[0], ins[1])));
            }
            Ok(ins[0].to_vec())
        }
        OpKind::Concat => {
            let axis = node.attr_usize("axis")?;
            let first = ins[0];
            if axis >= first.len() {
                return Err(node_err(node, format!("axis {axis} out of range")));
            }
            let mut out = first.to_vec();
            out[axis] = 0;
            for s in ins {
                let compatible = s.len() == first.len()
                    && s.iter().zip(first.iter()).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(node_err(node, format!("cannot concat {s:?} with {first:?}")));
                }
                out[axis] += s[axis];
            }
            Ok(out)
        }
        OpKind::MaxPool2d => {
            let [n, c, h, w] = to4(node, ins[0])?;
            let (k, s) = (node.attr_usize("kernel")?, node.attr_usize("stride")?);
            if s == 0 {
                return Err(node_err(node, "stride must be >= 1"));
            }
            match (window_extent(h, k, s, 0), window_extent(w, k, s, 0)) {
                (Some(oh), Some(ow)) => Ok(vec![n, c, oh, ow]),
                _ => Err(node_err(node, "pool window larger than input")),
            }
        }
        OpKind::GlobalAvgPool => {
            let [n, c, h, w] = to4(node, ins[0])?;
            if h * w == 0 {
                return Err(node_err(node, "empty spatial plane"));
            }
            Ok(vec![n, c, 1, 1])
        }
        OpKind::BatchNormAffine => {
            let x = ins[0];
            if x.len() < 2 {
                return Err(node_err(node, "needs a channel axis"));
            }
            let c = x[1];
            if ins[1] != [c] || ins[2] != [c] {
                return Err(node_err(node, format!("scale {:?} / shift {:?} vs {c} channels", ins[1], ins[2])));
            }
            Ok(x.to_vec())
        }
        OpKind::Softmax => {
            let axis = node.attr_usize("axis")?;
            if axis >= ins[0].len() || ins[0][axis] == 0 {
                return Err(node_err(node, format!("bad softmax axis {axis} for {:?}", ins[0])));
            }
            Ok(ins[0].to_vec())
        }
        OpKind::Flatten => match ins[0] {
            [n, rest @ ..] if !rest.is_empty() => Ok(vec![*n, rest.iter().product()]),
            other => Err(node_err(node, format!("cannot flatten {other:?}"))),
        },
        OpKind::BilinearResize => {
            let [n, c, _, _] = to4(node, ins[0])?;
            let (oh, ow) = (node.attr_usize("out_h")?, node.attr_usize("out_w")?);
            if oh == 0 || ow == 0 {
                return Err(node_err(node, "output extents must be >= 1"));
            }
            Ok(vec![n, c, oh, ow])
        }
        OpKind::ArgmaxChannel => {
            let [n, c, h, w] = to4(node, ins[0])?;
            if c == 0 {
                return Err(node_err(node, "no channels"));
            }
            Ok(vec![n, 1, h, w])
        }
        OpKind::Nms => {
            let candidates = numel_of(ins[1]);
            if numel_of(ins[0]) != 4 * candidates {
                return Err(node_err(node, format!("boxes {:?} do not hold 4 coords for {candidates} scores", ins[0])));
            }
            Ok(vec![candidates, 5])
        }
    }
}

fn to_array<const R: usize>(node: &Node, shape: &[usize]) -> Result<[usize; R]> {
    shape.try_into().map_err(|_| node_err(node, format!("expected rank {R}, got {shape:?}")))
}

fn to4(node: &Node, shape: &[usize]) -> Result<[usize; 4]> {
    to_array::<4>(node, shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn relu_model() -> GraphModel {
        GraphModel {
            name: "tiny".into(),
            task: TaskKind::Classification,
            inputs: vec![GraphInput { name: "x".into(), shape: vec![1, 4] }],
            outputs: vec!["y".into()],
            nodes: vec![Node::new("r", OpKind::Relu, &["x"], "y")],
            initializers: BTreeMap::new(),
        }
    }

    #[test]
    fn single_relu_validates() {
        let m = relu_model();
        let shapes = m.validate().unwrap();
        assert_eq!(shapes["y"], vec![1, 4]);
        assert_eq!(m.nodes.len(), 1);
    }

    #[test]
    fn forward_reference_is_a_graph_error() {
        let mut m = relu_model();
        m.nodes = vec![Node::new("a", OpKind::Relu, &["h"], "y"), Node::new("b", OpKind::Relu, &["x"], "h")];
        assert!(matches!(m.validate(), Err(Error::Graph(_))));
    }

    #[test]
    fn duplicate_ids_and_missing_outputs() {
        let mut m = relu_model();
        m.nodes.push(Node::new("r", OpKind::Relu, &["y"], "z"));
        assert!(matches!(m.validate(), Err(Error::Graph(_))));
        let mut m = relu_model();
        m.outputs = vec!["nope".into()];
        assert!(matches!(m.validate(), Err(Error::Graph(_))));
    }

    #[test]
    fn attrs_must_match_schema() {
        let mut m = relu_model();
        m.nodes[0] = Node::new("r", OpKind::Relu, &["x"], "y").with_attr("axis", AttrValue::Int(1));
        assert!(matches!(m.validate(), Err(Error::Graph(_))));
    }

    #[test]
    fn op_names_round_trip() {
        for op in OpKind::ALL {
            assert_eq!(OpKind::from_name(op.name()), Some(op));
        }
        assert_eq!(OpKind::from_name("FancyAttention"), None);
    }

    fn conv_model(h: usize) -> GraphModel {
        let mut inits = BTreeMap::new();
        inits.insert("w".into(), Tensor::zeros(vec![16, 8, 3, 3], DType::F32).unwrap());
        inits.insert("b".into(), Tensor::zeros(vec![16], DType::F32).unwrap());
        GraphModel {
            name: "conv".into(),
            task: TaskKind::Classification,
            inputs: vec![GraphInput { name: "x".into(), shape: vec![1, 8, h, h] }],
            outputs: vec!["f".into()],
            nodes: vec![
                Node::new("c", OpKind::Conv2d, &["x", "w", "b"], "y")
                    .with_attr("stride", AttrValue::Int(1))
                    .with_attr("padding", AttrValue::Int(1)),
                Node::new("p", OpKind::GlobalAvgPool, &["y"], "g"),
                Node::new("f", OpKind::Flatten, &["g"], "f"),
            ],
            initializers: inits,
        }
    }

    #[test]
    fn conv_pool_flatten_shapes() {
        let shapes = infer_shapes(&conv_model(32)).unwrap();
        assert_eq!(shapes["y"], vec![1, 16, 32, 32]);
        assert_eq!(shapes["g"], vec![1, 16, 1, 1]);
        assert_eq!(shapes["f"], vec![1, 16]);
    }

    #[test]
    fn flatten_of_feature_map() {
        let node = Node::new("f", OpKind::Flatten, &["x"], "y");
        assert_eq!(infer_node(&node, &[&[1, 16, 4, 4]]).unwrap(), vec![1, 256]);
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut m = conv_model(32);
        m.inputs[0].shape = vec![1, 3, 32, 32];
        match infer_shapes(&m) {
            Err(Error::Shape(msg)) => assert!(msg.contains("node c")),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_extent(32, 3, 1, 1), Some(32));
        assert_eq!(window_extent(32, 2, 2, 0), Some(16));
        assert_eq!(window_extent(7, 3, 2, 0), Some(3));
        assert_eq!(window_extent(1, 3, 1, 0), None);
    }
}
