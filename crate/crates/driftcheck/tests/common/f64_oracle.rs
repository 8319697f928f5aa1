//! Straight-loop f64 forward pass for conv/pool/linear graphs.
//!
//! Values are carried in f64 end to end with plain left-to-right sums, so the
//! result approximates exact arithmetic far more closely than either f32
//! backend.

use std::collections::BTreeMap;

use driftcheck_core::{GraphModel, OpKind, Tensor};

#[derive(Clone)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    fn of(t: &Tensor) -> Self {
        Self { shape: t.shape().to_vec(), data: t.to_f64_vec() }
    }
}

fn dims4(t: &T64) -> (usize, usize, usize, usize) {
    match t.shape[..] {
        [n, c, h, w] => (n, c, h, w),
        ref s => panic!("expected rank 4, got {s:?}"),
    }
}

fn conv(x: &T64, w: &T64, b: &T64, stride: usize, pad: usize) -> T64 {
    let (n, cin, h, wd) = dims4(x);
    let (cout, _, kh, kw) = dims4(w);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut data = Vec::new();
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((bi * cin + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w.data[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    data.push(acc + b.data[co]);
                }
            }
        }
    }
    T64 { shape: vec![n, cout, oh, ow], data }
}

fn max_pool(x: &T64, k: usize, s: usize) -> T64 {
    let (n, c, h, w) = dims4(x);
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut data = Vec::new();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x.data[(p * h + oy * s + ky) * w + ox * s + kx]);
                    }
                }
                data.push(m);
            }
        }
    }
    T64 { shape: vec![n, c, oh, ow], data }
}

fn gap(x: &T64) -> T64 {
    let (n, c, h, w) = dims4(x);
    let data = x.data.chunks(h * w).map(|p| p.iter().sum::<f64>() / (h * w) as f64).collect();
    T64 { shape: vec![n, c, 1, 1], data }
}

fn linear(x: &T64, w: &T64, b: &T64) -> T64 {
    let (n, fin, fout) = (x.shape[0], x.shape[1], w.shape[0]);
    let mut data = Vec::new();
    for r in 0..n {
        for o in 0..fout {
            let mut acc = 0.0;
            for i in 0..fin {
                acc += x.data[r * fin + i] * w.data[o * fin + i];
            }
            data.push(acc + b.data[o]);
        }
    }
    T64 { shape: vec![n, fout], data }
}

fn softmax_last2(x: &T64) -> T64 {
    let cols = x.shape[1];
    let mut data = Vec::new();
    for row in x.data.chunks(cols) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        data.extend(e.iter().map(|v| v / z));
    }
    T64 { shape: x.shape.clone(), data }
}

/// Runs `model` on `input` and returns its first output.
///
/// Panics on ops outside the classifier's set.
pub fn forward(model: &GraphModel, input: &Tensor) -> T64 {
    let mut env: BTreeMap<String, T64> = model.initializers.iter().map(|(k, v)| (k.clone(), T64::of(v))).collect();
    env.insert(model.inputs[0].name.clone(), T64::of(input));
    for node in &model.nodes {
        let ins: Vec<&T64> = node.inputs.iter().map(|n| &env[n]).collect();
        let int = |k: &str| node.attrs[k].as_f64() as usize;
        let out = match node.op {
            OpKind::Conv2d => conv(ins[0], ins[1], ins[2], int("stride"), int("padding")),
            OpKind::Relu => T64 { shape: ins[0].shape.clone(), data: ins[0].data.iter().map(|v| v.max(0.0)).collect() },
            OpKind::MaxPool2d => max_pool(ins[0], int("kernel"), int("stride")),
            OpKind::GlobalAvgPool => gap(ins[0]),
            OpKind::Flatten => {
                T64 { shape: vec![ins[0].shape[0], ins[0].shape[1..].iter().product()], data: ins[0].data.clone() }
            }
            OpKind::Linear => linear(ins[0], ins[1], ins[2]),
            OpKind::Softmax => {
                assert_eq!(int("axis"), 1, "oracle softmax handles axis 1 of rank 2");
                softmax_last2(ins[0])
            }
            op => panic!("f64 oracle does not cover {}", op.name()),
        };
        env.insert(node.output.clone(), out);
    }
    env.remove(&model.outputs[0]).expect("output produced")
}
