//! JSON model documents.
//!
//! ```json
//! {
//!   "name": "tiny", "task": "classification",
//!   "inputs": [{"name": "input", "shape": [1, 4]}],
//!   "outputs": ["y"],
//!   "nodes": [{"id": "r", "op": "Relu", "inputs": ["input"], "output": "y", "attrs": {}}],
//!   "initializers": {
//!     "w": {"inline": [[1.0, 2.0]], "dtype": "f32"},
//!     "b": {"file": "weights/b.drft"}
//!   }
//! }
//! ```
//!
//! Integer JSON numbers become integer attributes and anything with a
//! fraction or exponent becomes a float attribute.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use driftcheck_core::graph::GraphInput;
use driftcheck_core::tensor::TensorData;
use driftcheck_core::{AttrValue, DType, Error as CoreError, GraphModel, Node, OpKind, TaskKind, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::config::resolve_against;
use crate::error::{DriftError, Result};
use crate::tensorfile::read_tensor_file;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    task: String,
    inputs: Vec<InputDoc>,
    outputs: Vec<String>,
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    initializers: BTreeMap<String, InitDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    op: String,
    inputs: Vec<String>,
    output: String,
    #[serde(default)]
    attrs: BTreeMap<String, Number>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inline: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dtype: Option<String>,
}

fn flatten_inline(
    v: &Value,
    depth: usize,
    shape: &mut Vec<usize>,
    out: &mut Vec<f64>,
) -> std::result::Result<(), String> {
    match v {
        Value::Number(n) => {
            if depth != shape.len() {
                return Err("ragged nested array".into());
            }
            out.push(n.as_f64().ok_or("number out of range")?);
            Ok(())
        }
        Value::Array(items) => {
            if depth == shape.len() {
                if !out.is_empty() {
                    return Err("ragged nested array".into());
                }
                shape.push(items.len());
            } else if depth > shape.len() || shape[depth] != items.len() {
                return Err("ragged nested array".into());
            }
            for item in items {
                flatten_inline(item, depth + 1, shape, out)?;
            }
            Ok(())
        }
        other => Err(format!("expected a number or array, got {other}")),
    }
}

fn inline_tensor(v: &Value, dtype: DType) -> std::result::Result<Tensor, String> {
    let mut shape = Vec::new();
    let mut flat = Vec::new();
    flatten_inline(v, 0, &mut shape, &mut flat)?;
    // an empty innermost array leaves no numbers to pin deeper extents
    let data = match dtype {
        DType::F32 => TensorData::F32(flat.iter().map(|&x| x as f32).collect()),
        DType::F64 => TensorData::F64(flat),
    };
    let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
    if !t.is_finite() {
        return Err("inline values must be finite".into());
    }
    Ok(t)
}

fn nested(values: &[Value], shape: &[usize]) -> Value {
    match shape {
        [] => values[0].clone(),
        [d, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array((0..*d).map(|i| nested(&values[i * stride..(i + 1) * stride], rest)).collect())
        }
    }
}

fn tensor_to_inline(t: &Tensor) -> Value {
    let values: Vec<Value> = match t.data() {
        TensorData::F32(v) => v.iter().map(|&x| Value::from(x)).collect(),
        TensorData::F64(v) => v.iter().map(|&x| Value::from(x)).collect(),
    };
    if values.is_empty() {
        return Value::Array(Vec::new());
    }
    nested(&values, t.shape())
}

/// Parses and validates a model document. Relative initializer files are
/// resolved against `base_dir`.
pub fn load_model(json: &str, base_dir: &Path, origin: &Path) -> Result<GraphModel> {
    let bad = |msg: String| DriftError::ModelJson { path: origin.to_path_buf(), msg };
    let doc: ModelDoc = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    let task = TaskKind::from_name(&doc.task).ok_or_else(|| bad(format!("unknown task {}", doc.task)))?;
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in doc.nodes {
        let op = OpKind::from_name(&n.op).ok_or_else(|| CoreError::UnsupportedOp(n.op.clone()))?;
        let attrs = n
            .attrs
            .into_iter()
            .map(|(k, v)| {
                let value = match v.as_i64() {
                    Some(i) => AttrValue::Int(i),
                    None => AttrValue::Float(v.as_f64().unwrap_or(f64::NAN)),
                };
                (k, value)
            })
            .collect();
        nodes.push(Node { id: n.id, op, inputs: n.inputs, output: n.output, attrs });
    }
    let mut initializers = BTreeMap::new();
    for (name, init) in doc.initializers {
        let t = match (init.file, init.inline) {
            (Some(file), None) => {
                if init.dtype.is_some() {
                    return Err(bad(format!("initializer {name}: dtype comes from the file")));
                }
                read_tensor_file(&resolve_against(base_dir, &file))?
            }
            (None, Some(v)) => {
                let dtype = match init.dtype.as_deref() {
                    None => DType::F32,
                    Some(d) => {
                        DType::from_name(d).ok_or_else(|| bad(format!("initializer {name}: unknown dtype {d}")))?
                    }
                };
                inline_tensor(&v, dtype).map_err(|e| bad(format!("initializer {name}: {e}")))?
            }
            _ => return Err(bad(format!("initializer {name}: exactly one of file or inline is required"))),
        };
        initializers.insert(name, t);
    }
    let model = GraphModel {
        name: doc.name,
        task,
        inputs: doc.inputs.into_iter().map(|i| GraphInput { name: i.name, shape: i.shape }).collect(),
        outputs: doc.outputs,
        nodes,
        initializers,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model_file(path: &Path) -> Result<GraphModel> {
    let text = fs::read_to_string(path).map_err(|e| DriftError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    load_model(&text, base, path)
}

/// Canonical form: every initializer inline, keys sorted.
pub fn model_to_json(model: &GraphModel) -> String {
    let doc = ModelDoc {
        name: model.name.clone(),
        task: model.task.name().into(),
        inputs: model.inputs.iter().map(|i| InputDoc { name: i.name.clone(), shape: i.shape.clone() }).collect(),
        outputs: model.outputs.clone(),
        nodes: model
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                op: n.op.name().into(),
                inputs: n.inputs.clone(),
                output: n.output.clone(),
                attrs: n
                    .attrs
                    .iter()
                    .map(|(k, v)| {
                        let num = match *v {
                            AttrValue::Int(i) => Number::from(i),
                            AttrValue::Float(f) => Number::from_f64(f).unwrap_or_else(|| Number::from(0)),
                        };
                        (k.clone(), num)
                    })
                    .collect(),
            })
            .collect(),
        initializers: model
            .initializers
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    InitDoc { file: None, inline: Some(tensor_to_inline(t)), dtype: Some(t.dtype().name().into()) },
                )
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model documents always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use driftcheck_core::builders::{build_synthetic_classifier, build_synthetic_detector};

    const RELU: &str = r#"{
        "name": "tiny", "task": "classification",
        "inputs": [{"name": "x", "shape": [1, 4]}],
        "outputs": ["y"],
        "nodes": [{"id": "r", "op": "Relu", "inputs": ["x"], "output": "y"}]
    }"#;

    fn load(json: &str) -> Result<GraphModel> {
        load_model(json, Path::new("."), Path::new("test.json"))
    }

    #[test]
    fn single_relu() {
        assert_eq!(load(RELU).unwrap().nodes.len(), 1);
    }

    #[test]
    fn unknown_op_is_unsupported() {
        let doc = RELU.replace("\"Relu\"", "\"FancyAttention\"");
        match load(&doc) {
            Err(DriftError::Core(CoreError::UnsupportedOp(op))) => assert_eq!(op, "FancyAttention"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn forward_reference_is_graph_error() {
        let doc = r#"{
            "name": "t", "task": "classification",
            "inputs": [{"name": "x", "shape": [1, 4]}], "outputs": ["z"],
            "nodes": [
                {"id": "a", "op": "Relu", "inputs": ["y"], "output": "z"},
                {"id": "b", "op": "Relu", "inputs": ["x"], "output": "y"}
            ]
        }"#;
        assert!(matches!(load(doc), Err(DriftError::Core(CoreError::Graph(_)))));
    }

    #[test]
    fn inline_nested_arrays() {
        let v: Value = serde_json::from_str("[[1, 2, 3], [4, 5, 6]]").unwrap();
        let t = inline_tensor(&v, DType::F32).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        let ragged: Value = serde_json::from_str("[[1, 2], [3]]").unwrap();
        assert!(inline_tensor(&ragged, DType::F32).is_err());
        let scalar: Value = serde_json::from_str("2.5").unwrap();
        assert_eq!(inline_tensor(&scalar, DType::F64).unwrap().rank(), 0);
    }

    #[test]
    fn builders_round_trip_through_json() {
        for m in [build_synthetic_classifier(5), build_synthetic_detector(7)] {
            let back = load(&model_to_json(&m)).unwrap();
            assert_eq!(back.nodes, m.nodes);
            for (k, t) in &m.initializers {
                assert!(t.bitwise_eq(&back.initializers[k]), "{k}");
            }
            assert_eq!(model_to_json(&back), model_to_json(&m));
        }
    }
}
