use std::collections::BTreeMap;

use driftcheck_core::backend::{ExecOptions, NullClock};
use driftcheck_core::builders::{build_builtin, synthetic_input, BuildOptions, BUILTIN_MODELS, INPUT_NAME};
use driftcheck_core::kernels::{eval_node, KernelSemantics};
use driftcheck_core::verify::{detection_f1, detections_from_tensor};
use driftcheck_core::{
    execute, infer_shapes, BackendSpec, GraphModel, NmsOrder, Node, OpKind, Precision, ReductionOrder, SplitMix64,
    TaskKind, Tensor,
};
use proptest::prelude::*;

fn models() -> Vec<GraphModel> {
    let mut v: Vec<GraphModel> =
        BUILTIN_MODELS.iter().map(|m| build_builtin(m, 7, &BuildOptions::default()).unwrap()).collect();
    let tied = BuildOptions { tied_scores: true, iou_threshold: 0.3, ..BuildOptions::default() };
    v.push(build_builtin("detector", 7, &tied).unwrap());
    v
}

fn input_for(m: &GraphModel, seed: u64) -> BTreeMap<String, Tensor> {
    let shape = m.inputs[0].shape.clone();
    BTreeMap::from([(INPUT_NAME.to_string(), synthetic_input(seed, "x", shape).unwrap())])
}

fn opts(capture: bool) -> ExecOptions {
    ExecOptions { capture_activations: capture, repeats: 1 }
}

fn drift_free() -> BackendSpec {
    let mut s = BackendSpec::optimized();
    s.precision = Precision::Full;
    s.reduction_order = ReductionOrder::Sequential;
    s.fuse_conv_relu = false;
    s.nms_order = NmsOrder::Stable;
    s
}

#[test]
fn reference_is_repeatable() {
    for m in models() {
        let x = input_for(&m, 3);
        let a = execute(&m, &x, &BackendSpec::reference(), opts(true), &NullClock).unwrap();
        let b = execute(&m, &x, &BackendSpec::reference(), opts(true), &NullClock).unwrap();
        for ((_, p), (_, q)) in a.outputs.iter().zip(&b.outputs) {
            assert!(p.bitwise_eq(q), "{}", m.name);
        }
        for (p, q) in a.activations.unwrap().iter().zip(&b.activations.unwrap()) {
            assert!(p.tensor.bitwise_eq(&q.tensor), "{} {}", m.name, p.node_id);
        }
    }
}

#[test]
fn drift_free_optimized_matches_reference() {
    for m in models() {
        for seed in 0..4 {
            let x = input_for(&m, seed);
            let r = execute(&m, &x, &BackendSpec::reference(), opts(false), &NullClock).unwrap();
            let t = execute(&m, &x, &drift_free(), opts(false), &NullClock).unwrap();
            assert!(r.outputs[0].1.bitwise_eq(&t.outputs[0].1), "{} seed {seed}", m.name);
        }
    }
}

#[test]
fn forced_full_precision_never_rounds() {
    for m in models() {
        let x = input_for(&m, 1);
        let mut spec = BackendSpec::optimized();
        spec.precision = Precision::Reduced;
        let reduced = execute(&m, &x, &spec, opts(false), &NullClock).unwrap();
        assert!(reduced.half_roundings > 0, "{}", m.name);
        spec.mitigations.force_full_precision = true;
        let forced = execute(&m, &x, &spec, opts(false), &NullClock).unwrap();
        assert_eq!(forced.half_roundings, 0, "{}", m.name);
    }
}

#[test]
fn fallback_nodes_match_reference_given_same_inputs() {
    for m in models() {
        let x = input_for(&m, 2);
        let ops: Vec<OpKind> = m.nodes.iter().map(|n| n.op).collect();
        for op in ops {
            let mut spec = BackendSpec::optimized();
            spec.precision = Precision::Reduced;
            spec.mitigations.eager_fallback_ops.insert(op);
            let trace = execute(&m, &x, &spec, opts(true), &NullClock).unwrap();
            assert!(trace.fallback_events.iter().all(|e| e.op == op));
            let acts = trace.activations.unwrap();
            let mut env: BTreeMap<String, Tensor> = m.initializers.clone();
            env.extend(x.clone());
            for (node, act) in m.nodes.iter().zip(&acts) {
                if node.op == op {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|n| &env[n]).collect();
                    let sem =
                        KernelSemantics { pre_nms_sort: spec.mitigations.pre_nms_sort, ..KernelSemantics::REFERENCE };
                    let want = eval_node(node, &ins, sem).unwrap();
                    assert!(want.bitwise_eq(&act.tensor), "{} {}", m.name, node.id);
                }
                env.insert(node.output.clone(), act.tensor.clone());
            }
        }
    }
}

#[test]
fn inferred_shapes_match_execution() {
    for m in models() {
        let shapes = infer_shapes(&m).unwrap();
        for spec in [BackendSpec::reference(), BackendSpec::optimized()] {
            let acts = execute(&m, &input_for(&m, 4), &spec, opts(true), &NullClock).unwrap().activations.unwrap();
            for (node, act) in m.nodes.iter().zip(&acts) {
                let want = &shapes[&node.output];
                if node.op == OpKind::Nms {
                    // (N, 5) is the capacity; kept rows can be fewer
                    assert_eq!(act.tensor.shape()[1], want[1]);
                    assert!(act.tensor.shape()[0] <= want[0]);
                } else {
                    assert_eq!(act.tensor.shape(), &want[..], "{} {}", m.name, node.id);
                }
            }
        }
    }
}

#[test]
fn builders_are_bitwise_deterministic() {
    for name in BUILTIN_MODELS {
        let a = build_builtin(name, 11, &BuildOptions::default()).unwrap();
        let b = build_builtin(name, 11, &BuildOptions::default()).unwrap();
        assert_eq!(a.nodes, b.nodes);
        for (k, t) in &a.initializers {
            assert!(t.bitwise_eq(&b.initializers[k]), "{name} {k}");
        }
        let c = build_builtin(name, 12, &BuildOptions::default()).unwrap();
        assert!(a.initializers.iter().any(|(k, t)| !t.bitwise_eq(&c.initializers[k])));
    }
}

fn nms_only(iou_threshold: f64, n: usize) -> GraphModel {
    GraphModel {
        name: "nms_only".into(),
        task: TaskKind::Detection,
        inputs: vec![
            driftcheck_core::graph::GraphInput { name: "boxes".into(), shape: vec![n, 4] },
            driftcheck_core::graph::GraphInput { name: "scores".into(), shape: vec![n] },
        ],
        outputs: vec!["kept".into()],
        nodes: vec![Node::new("nms", OpKind::Nms, &["boxes", "scores"], "kept")
            .with_attr("iou_threshold", driftcheck_core::AttrValue::Float(iou_threshold))],
        initializers: BTreeMap::new(),
    }
}

fn candidate_inputs(cands: &[(f32, f32, f32, f32, f32)]) -> BTreeMap<String, Tensor> {
    let boxes: Vec<f32> = cands.iter().flat_map(|c| [c.0, c.1, c.0 + c.2, c.1 + c.3]).collect();
    let scores: Vec<f32> = cands.iter().map(|c| c.4).collect();
    BTreeMap::from([
        ("boxes".to_string(), Tensor::from_f32(vec![cands.len(), 4], boxes).unwrap()),
        ("scores".to_string(), Tensor::from_f32(vec![cands.len()], scores).unwrap()),
    ])
}

proptest! {
    #[test]
    fn sorted_detection_is_permutation_invariant(
        raw in proptest::collection::vec((0u8..6, 0u8..6, 1u8..5, 1u8..5, 0u8..3), 1..20),
        seed in any::<u64>(),
    ) {
        // distinct (score, x1, y1) keys
        let mut seen = std::collections::BTreeSet::new();
        let cands: Vec<(f32, f32, f32, f32, f32)> = raw
            .into_iter()
            .filter(|c| seen.insert((c.4, c.0, c.1)))
            .map(|c| (f32::from(c.0) * 10.0, f32::from(c.1) * 10.0, f32::from(c.2) * 10.0, f32::from(c.3) * 10.0, f32::from(c.4) / 2.0))
            .collect();
        let mut perm: Vec<usize> = (0..cands.len()).collect();
        let mut rng = SplitMix64::new(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
        }
        let shuffled: Vec<_> = perm.iter().map(|&i| cands[i]).collect();
        let m = nms_only(0.3, cands.len());
        let mut reference = BackendSpec::reference();
        let mut target = BackendSpec::optimized();
        reference.mitigations.pre_nms_sort = true;
        target.mitigations.pre_nms_sort = true;
        let r = execute(&m, &candidate_inputs(&cands), &reference, opts(false), &NullClock).unwrap();
        let t = execute(&m, &candidate_inputs(&shuffled), &target, opts(false), &NullClock).unwrap();
        let (rd, td) = (
            detections_from_tensor(&r.outputs[0].1).unwrap(),
            detections_from_tensor(&t.outputs[0].1).unwrap(),
        );
        prop_assert_eq!(detection_f1(&rd, &td, 0.5), 1.0);
        prop_assert!(r.outputs[0].1.bitwise_eq(&t.outputs[0].1));
    }
}
