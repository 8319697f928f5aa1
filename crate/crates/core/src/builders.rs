//! Seeded synthetic models, one per task family.
//!
//! Weights are uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, each
//! initializer drawn from its own [`SplitMix64::stream`] keyed by the
//! initializer name. Output is bitwise reproducible for a given seed and
//! [`BUILDER_VERSION`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{AttrValue, GraphInput, GraphModel, Node, OpKind, TaskKind};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const BUILDER_VERSION: u32 = 1;
pub const BUILTIN_MODELS: [&str; 3] = ["classifier", "segmenter", "detector"];
pub const INPUT_NAME: &str = "input";
pub const CLASSIFIER_CLASSES: usize = 10;
pub const SEGMENTER_CLASSES: usize = 4;
pub const DETECTOR_CANDIDATES: usize = 64;
/// Upper bound of the detector's box coordinate range `[0, BOX_EXTENT]`.
pub const BOX_EXTENT: f32 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub height: usize,
    pub width: usize,
    /// Detector only: give candidates 0 and 1 exactly equal scores and
    /// overlapping boxes so the kept set depends on NMS tie order.
    pub tied_scores: bool,
    pub iou_threshold: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { height: 32, width: 32, tied_scores: false, iou_threshold: 0.5 }
    }
}

struct Builder {
    seed: u64,
    nodes: Vec<Node>,
    initializers: BTreeMap<String, Tensor>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self { seed, nodes: Vec::new(), initializers: BTreeMap::new() }
    }

    fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> String {
        let mut rng = SplitMix64::stream(self.seed, name);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_f32(-bound, bound)).collect();
        self.put(name, shape, data)
    }

    fn put(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> String {
        let t = Tensor::from_f32(shape, data).expect("builder tensors are well formed");
        self.initializers.insert(name.into(), t);
        name.into()
    }

    fn push(&mut self, node: Node) -> String {
        let out = node.output.clone();
        self.nodes.push(node);
        out
    }

    fn conv(&mut self, id: &str, x: &str, cin: usize, cout: usize, k: usize, pad: usize) -> String {
        let bound = 1.0 / libm::sqrt((cin * k * k) as f64);
        let w = self.uniform(&format!("{id}.weight"), vec![cout, cin, k, k], bound);
        let b = self.uniform(&format!("{id}.bias"), vec![cout], bound);
        self.push(
            Node::new(id, OpKind::Conv2d, &[x, &w, &b], id)
                .with_attr("stride", AttrValue::Int(1))
                .with_attr("padding", AttrValue::Int(pad as i64)),
        )
    }

    fn linear(&mut self, id: &str, x: &str, fin: usize, fout: usize) -> String {
        let bound = 1.0 / libm::sqrt(fin as f64);
        let w = self.uniform(&format!("{id}.weight"), vec![fout, fin], bound);
        let b = self.uniform(&format!("{id}.bias"), vec![fout], bound);
        self.push(Node::new(id, OpKind::Linear, &[x, &w, &b], id))
    }

    fn unary(&mut self, id: &str, op: OpKind, x: &str) -> String {
        self.push(Node::new(id, op, &[x], id))
    }

    fn affine(&mut self, id: &str, x: &str, scale: Vec<f32>, shift: Vec<f32>) -> String {
        let c = scale.len();
        let s = self.put(&format!("{id}.scale"), vec![c], scale);
        let h = self.put(&format!("{id}.shift"), vec![c], shift);
        self.push(Node::new(id, OpKind::BatchNormAffine, &[x, &s, &h], id))
    }

    /// conv(3->8) relu pool conv(8->16) relu gap flatten: a `(1, 16)` feature.
    fn backbone(&mut self) -> String {
        let x = self.conv("conv1", INPUT_NAME, 3, 8, 3, 1);
        let x = self.unary("relu1", OpKind::Relu, &x);
        let x = self.push(
            Node::new("pool1", OpKind::MaxPool2d, &[&x], "pool1")
                .with_attr("kernel", AttrValue::Int(2))
                .with_attr("stride", AttrValue::Int(2)),
        );
        let x = self.conv("conv2", &x, 8, 16, 3, 1);
        let x = self.unary("relu2", OpKind::Relu, &x);
        let x = self.unary("gap", OpKind::GlobalAvgPool, &x);
        self.unary("flatten", OpKind::Flatten, &x)
    }

    fn finish(self, name: &str, task: TaskKind, opts: &BuildOptions, outputs: Vec<String>) -> GraphModel {
        GraphModel {
            name: name.into(),
            task,
            inputs: vec![GraphInput { name: INPUT_NAME.into(), shape: vec![1, 3, opts.height, opts.width] }],
            outputs,
            nodes: self.nodes,
            initializers: self.initializers,
        }
    }
}

fn check_extent(opts: &BuildOptions) -> Result<()> {
    if opts.height < 2 || opts.width < 2 {
        return Err(Error::InvalidConfig(format!(
            "builtin models need inputs of at least 2x2, got {}x{}",
            opts.height, opts.width
        )));
    }
    Ok(())
}

pub fn build_synthetic_classifier(seed: u64) -> GraphModel {
    build_classifier(seed, &BuildOptions::default()).expect("default extents are valid")
}

pub fn build_synthetic_segmenter(seed: u64) -> GraphModel {
    build_segmenter(seed, &BuildOptions::default()).expect("default extents are valid")
}

pub fn build_synthetic_detector(seed: u64) -> GraphModel {
    build_detector(seed, &BuildOptions::default()).expect("default extents are valid")
}

/// Small CNN ending in a 10-way softmax.
pub fn build_classifier(seed: u64, opts: &BuildOptions) -> Result<GraphModel> {
    check_extent(opts)?;
    let mut b = Builder::new(seed);
    let f = b.backbone();
    let logits = b.linear("fc", &f, 16, CLASSIFIER_CLASSES);
    let probs = b.push(Node::new("softmax", OpKind::Softmax, &[&logits], "probs").with_attr("axis", AttrValue::Int(1)));
    Ok(b.finish("classifier", TaskKind::Classification, opts, vec![probs]))
}

/// Spatially preserving conv stack with a 4-class argmax label mask.
pub fn build_segmenter(seed: u64, opts: &BuildOptions) -> Result<GraphModel> {
    check_extent(opts)?;
    let mut b = Builder::new(seed);
    let x = b.conv("conv1", INPUT_NAME, 3, 8, 3, 1);
    let x = b.unary("relu1", OpKind::Relu, &x);
    let x = b.conv("conv2", &x, 8, 8, 3, 1);
    let x = b.unary("relu2", OpKind::Relu, &x);
    let x = b.conv("classifier", &x, 8, SEGMENTER_CLASSES, 1, 0);
    let mask = b.push(Node::new("argmax", OpKind::ArgmaxChannel, &[&x], "mask"));
    Ok(b.finish("segmenter", TaskKind::Segmentation, opts, vec![mask]))
}

/// Backbone plus box and score heads feeding a single Nms node.
///
/// The box head predicts `(x1, y1, w, h)` per candidate in units of
/// `BOX_EXTENT / 2`; a fixed Linear turns that into corners, and an affine
/// clamp `min(50 * v, 100)` built from Relu and BatchNormAffine keeps every
/// coordinate in `[0, 100]`.
pub fn build_detector(seed: u64, opts: &BuildOptions) -> Result<GraphModel> {
    check_extent(opts)?;
    let n = DETECTOR_CANDIDATES;
    let mut b = Builder::new(seed);
    let f = b.backbone();

    // Raw geometry: small feature-dependent weights around per-candidate
    // biases, so boxes spread over the canvas instead of piling up.
    let mut rng = SplitMix64::stream(seed, "box_head.weight");
    let mut box_w: Vec<f32> = (0..4 * n * 16).map(|_| rng.uniform_f32(-0.025, 0.025)).collect();
    let mut rng = SplitMix64::stream(seed, "box_head.bias");
    let mut box_b: Vec<f32> = (0..n)
        .flat_map(|_| {
            let x = rng.uniform_f32(0.05, 1.35);
            let y = rng.uniform_f32(0.05, 1.35);
            let w = rng.uniform_f32(0.2, 0.5);
            let h = rng.uniform_f32(0.2, 0.5);
            [x, y, w, h]
        })
        .collect();
    let score_bound = 1.0 / libm::sqrt(16.0);
    let mut rng = SplitMix64::stream(seed, "score_head.weight");
    let mut score_w: Vec<f32> = (0..n * 16).map(|_| rng.uniform_f32(-score_bound, score_bound)).collect();
    let mut rng = SplitMix64::stream(seed, "score_head.bias");
    let mut score_b: Vec<f32> = (0..n).map(|_| rng.uniform_f32(0.0, 1.0)).collect();

    if opts.tied_scores {
        // Candidates 0 and 1: input-independent, equal top scores, IoU 3/7.
        for row in 0..8 {
            box_w[row * 16..(row + 1) * 16].fill(0.0);
        }
        box_b[..8].copy_from_slice(&[0.3, 0.3, 0.4, 0.4, 0.46, 0.3, 0.4, 0.4]);
        score_w[..32].fill(0.0);
        score_b[0] = 10.0;
        score_b[1] = 10.0;
    }

    let bw = b.put("box_head.weight", vec![4 * n, 16], box_w);
    let bb = b.put("box_head.bias", vec![4 * n], box_b);
    let raw = b.push(Node::new("box_head", OpKind::Linear, &[&f, &bw, &bb], "box_head"));
    let raw = b.unary("box_relu", OpKind::Relu, &raw);

    let mut corners = vec![0.0f32; 16 * n * n];
    for c in 0..n {
        let (x, y, w, h) = (4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3);
        let row = |r: usize, col: usize| r * 4 * n + col;
        corners[row(x, x)] = 1.0;
        corners[row(y, y)] = 1.0;
        corners[row(w, x)] = 1.0;
        corners[row(w, w)] = 1.0;
        corners[row(h, y)] = 1.0;
        corners[row(h, h)] = 1.0;
    }
    let cw = b.put("corners.weight", vec![4 * n, 4 * n], corners);
    let cb = b.put("corners.bias", vec![4 * n], vec![0.0; 4 * n]);
    let boxes = b.push(Node::new("corners", OpKind::Linear, &[&raw, &cw, &cb], "corners"));

    let half = BOX_EXTENT / 2.0;
    let boxes = b.affine("box_scale", &boxes, vec![half; 4 * n], vec![0.0; 4 * n]);
    let boxes = b.affine("clamp_flip", &boxes, vec![-1.0; 4 * n], vec![BOX_EXTENT; 4 * n]);
    let boxes = b.unary("clamp_relu", OpKind::Relu, &boxes);
    let boxes = b.affine("clamp_unflip", &boxes, vec![-1.0; 4 * n], vec![BOX_EXTENT; 4 * n]);

    let sw = b.put("score_head.weight", vec![n, 16], score_w);
    let sb = b.put("score_head.bias", vec![n], score_b);
    let scores = b.push(Node::new("score_head", OpKind::Linear, &[&f, &sw, &sb], "scores"));

    let kept = b.push(
        Node::new("nms", OpKind::Nms, &[&boxes, &scores], "detections")
            .with_attr("iou_threshold", AttrValue::Float(opts.iou_threshold)),
    );
    Ok(b.finish("detector", TaskKind::Detection, opts, vec![kept]))
}

/// Builds one of [`BUILTIN_MODELS`] by name.
pub fn build_builtin(name: &str, seed: u64, opts: &BuildOptions) -> Result<GraphModel> {
    match name {
        "classifier" => build_classifier(seed, opts),
        "segmenter" => build_segmenter(seed, opts),
        "detector" => build_detector(seed, opts),
        other => Err(Error::InvalidConfig(format!(
            "unknown builtin model {other}; expected one of classifier, segmenter, detector"
        ))),
    }
}

/// Seeded synthetic input: uniform `[0, 1)` drawn from the stream named
/// `name`.
pub fn synthetic_input(seed: u64, name: &str, shape: Vec<usize>) -> Result<Tensor> {
    let mut rng = SplitMix64::stream(seed, name);
    let n = shape.iter().product();
    Tensor::from_f32(shape, (0..n).map(|_| rng.uniform_f32(0.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{execute, BackendSpec, ExecOptions, NullClock};
    use crate::boxes::iou;
    use crate::verify::detections_from_tensor;

    fn run_reference(model: &GraphModel, seed: u64) -> crate::backend::ExecutionTrace {
        let shape = model.inputs[0].shape.clone();
        let mut inputs = BTreeMap::new();
        inputs.insert(INPUT_NAME.into(), synthetic_input(seed, "input", shape).unwrap());
        let opts = ExecOptions { capture_activations: true, repeats: 1 };
        execute(model, &inputs, &BackendSpec::reference(), opts, &NullClock).unwrap()
    }

    #[test]
    fn classifier_is_deterministic_per_seed() {
        let a = build_synthetic_classifier(5);
        let b = build_synthetic_classifier(5);
        assert_eq!(a.initializers.len(), b.initializers.len());
        for (k, t) in &a.initializers {
            assert!(t.bitwise_eq(&b.initializers[k]));
        }
        let c = build_synthetic_classifier(6);
        assert!(a.initializers.iter().any(|(k, t)| !t.bitwise_eq(&c.initializers[k])));
    }

    #[test]
    fn classifier_rows_sum_to_one() {
        let m = build_synthetic_classifier(5);
        assert_eq!(m.nodes.len(), 9);
        let out = &run_reference(&m, 1).outputs[0].1;
        assert_eq!(out.shape(), &[1, 10]);
        let s: f32 = out.as_f32().unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn segmenter_labels_in_range() {
        let opts = BuildOptions { height: 64, width: 64, ..Default::default() };
        let m = build_segmenter(5, &opts).unwrap();
        let out = &run_reference(&m, 1).outputs[0].1;
        assert_eq!(out.shape(), &[1, 1, 64, 64]);
        assert!(out.as_f32().unwrap().iter().all(|&v| v.fract() == 0.0 && (0.0..4.0).contains(&v)));
    }

    #[test]
    fn zero_weight_segmenter_is_all_label_zero() {
        let mut m = build_synthetic_segmenter(5);
        for t in m.initializers.values_mut() {
            t.as_f32_mut().unwrap().fill(0.0);
        }
        let out = &run_reference(&m, 1).outputs[0].1;
        assert!(out.as_f32().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detector_boxes_stay_on_canvas() {
        let m = build_synthetic_detector(5);
        let trace = run_reference(&m, 1);
        let dets = detections_from_tensor(&trace.outputs[0].1).unwrap();
        assert!(!dets.is_empty() && dets.len() <= DETECTOR_CANDIDATES);
        for d in &dets {
            assert!(d.bbox.is_well_formed());
            for v in [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2] {
                assert!((0.0..=100.0).contains(&v));
            }
        }
    }

    #[test]
    fn tie_fixture_candidates() {
        let opts = BuildOptions { tied_scores: true, iou_threshold: 0.3, ..Default::default() };
        let m = build_detector(5, &opts).unwrap();
        let trace = run_reference(&m, 1);
        let acts = trace.activations.unwrap();
        let boxes = acts.iter().find(|a| a.node_id == "clamp_unflip").unwrap();
        let scores = acts.iter().find(|a| a.node_id == "score_head").unwrap();
        let s = scores.tensor.as_f32().unwrap();
        assert_eq!((s[0], s[1]), (10.0, 10.0));
        let bx = crate::kernels::decode_boxes(boxes.tensor.as_f32().unwrap());
        assert_eq!(bx[0], crate::boxes::BoundingBox::new(15.0, 15.0, 35.0, 35.0));
        let v = iou(&bx[0], &bx[1]);
        assert!(v > 0.3 && v < 0.5, "iou {v}");
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(build_builtin("transformer", 5, &BuildOptions::default()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn all_builtins_validate() {
        for name in BUILTIN_MODELS {
            build_builtin(name, 5, &BuildOptions::default()).unwrap().validate().unwrap();
        }
    }
}
