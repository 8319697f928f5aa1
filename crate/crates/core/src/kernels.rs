//! One `f32` evaluation routine per [`OpKind`].
//!
//! Kernels are textbook definitions. The only knobs are the reduction order
//! used inside Conv2d, Linear, GlobalAvgPool and the Softmax denominator, and
//! the NMS tie policy. Precision rounding is applied by the backend on node
//! outputs, never in here.

use alloc::vec;
use alloc::vec::Vec;

use crate::boxes::{self, BoundingBox, NmsOrder};
use crate::error::{shape_err, Error, Result};
use crate::graph::{infer_node, Node, OpKind};
use crate::preprocess;
use crate::reduce::ReductionOrder;
use crate::tensor::{strides_of, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelSemantics {
    pub reduction: ReductionOrder,
    pub nms_order: NmsOrder,
    pub pre_nms_sort: bool,
}

impl KernelSemantics {
    pub const REFERENCE: KernelSemantics =
        KernelSemantics { reduction: ReductionOrder::Sequential, nms_order: NmsOrder::Stable, pre_nms_sort: false };
}

fn f32_data(t: &Tensor) -> Result<&[f32]> {
    t.as_f32().ok_or_else(|| Error::DType("kernels operate on f32 tensors".into()))
}

/// Evaluates `node` on already-resolved input tensors.
pub fn eval_node(node: &Node, inputs: &[&Tensor], sem: KernelSemantics) -> Result<Tensor> {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let out_shape = infer_node(node, &shapes)?;
    let data: Vec<&[f32]> = inputs.iter().map(|t| f32_data(t)).collect::<Result<_>>()?;
    match node.op {
        OpKind::Conv2d => {
            conv2d(inputs, &data, node.attr_usize("stride")?, node.attr_usize("padding")?, out_shape, sem.reduction)
        }
        OpKind::Linear => linear(inputs, &data, out_shape, sem.reduction),
        OpKind::Relu => Tensor::from_f32(out_shape, data[0].iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()),
        OpKind::Add => Tensor::from_f32(out_shape, data[0].iter().zip(data[1]).map(|(a, b)| a + b).collect()),
        OpKind::Concat => concat(inputs, &data, node.attr_usize("axis")?, out_shape),
        OpKind::MaxPool2d => {
            max_pool(inputs[0], data[0], node.attr_usize("kernel")?, node.attr_usize("stride")?, out_shape)
        }
        OpKind::GlobalAvgPool => global_avg_pool(inputs[0], data[0], out_shape, sem.reduction),
        OpKind::BatchNormAffine => {
            let shape = inputs[0].shape();
            let channels = shape[1];
            let inner: usize = shape[2..].iter().product();
            let (scale, shift) = (data[1], data[2]);
            let out = data[0]
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = (i / inner) % channels;
                    v * scale[c] + shift[c]
                })
                .collect();
            Tensor::from_f32(out_shape, out)
        }
        OpKind::Softmax => softmax(inputs[0], data[0], node.attr_usize("axis")?, sem.reduction),
        OpKind::Flatten => inputs[0].clone().reshape(out_shape),
        OpKind::BilinearResize => preprocess::bilinear_resize(inputs[0], out_shape[2], out_shape[3]),
        OpKind::ArgmaxChannel => argmax_channel(inputs[0], data[0], out_shape),
        OpKind::Nms => nms_kernel(data[0], data[1], node.attr_f64("iou_threshold")?, sem),
    }
}

fn conv2d(
    inputs: &[&Tensor],
    data: &[&[f32]],
    stride: usize,
    pad: usize,
    out_shape: Vec<usize>,
    reduction: ReductionOrder,
) -> Result<Tensor> {
    let [n, cin, h, w] = *inputs[0].shape() else {
        return Err(shape_err!("conv2d input must be rank 4"));
    };
    let [cout, _, kh, kw] = *inputs[1].shape() else {
        return Err(shape_err!("conv2d weight must be rank 4"));
    };
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let (x, wt, bias) = (data[0], data[1], data[2]);
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    let mut terms: Vec<f32> = Vec::with_capacity(cin * kh * kw);
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    terms.clear();
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx).wrapping_sub(pad);
                                if ix >= w {
                                    continue;
                                }
                                let xv = x[((b * cin + ci) * h + iy) * w + ix];
                                let wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
                                terms.push(xv * wv);
                            }
                        }
                    }
                    out.push(reduction.sum_unchecked(&terms) + bias[co]);
                }
            }
        }
    }
    Tensor::from_f32(out_shape, out)
}

fn linear(inputs: &[&Tensor], data: &[&[f32]], out_shape: Vec<usize>, reduction: ReductionOrder) -> Result<Tensor> {
    let fin = inputs[0].shape()[1];
    let (rows, fout) = (out_shape[0], out_shape[1]);
    let (x, wt, bias) = (data[0], data[1], data[2]);
    let mut out = Vec::with_capacity(rows * fout);
    let mut terms = vec![0.0f32; fin];
    for r in 0..rows {
        let xr = &x[r * fin..(r + 1) * fin];
        for o in 0..fout {
            let wr = &wt[o * fin..(o + 1) * fin];
            for (t, (a, b)) in terms.iter_mut().zip(xr.iter().zip(wr)) {
                *t = a * b;
            }
            out.push(reduction.sum_unchecked(&terms) + bias[o]);
        }
    }
    Tensor::from_f32(out_shape, out)
}

fn concat(inputs: &[&Tensor], data: &[&[f32]], axis: usize, out_shape: Vec<usize>) -> Result<Tensor> {
    let outer: usize = out_shape[..axis].iter().product();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for (t, d) in inputs.iter().zip(data) {
            let block: usize = t.shape()[axis..].iter().product();
            out.extend_from_slice(&d[o * block..(o + 1) * block]);
        }
    }
    Tensor::from_f32(out_shape, out)
}

fn max_pool(x: &Tensor, data: &[f32], k: usize, s: usize, out_shape: Vec<usize>) -> Result<Tensor> {
    let [_, _, h, w] = *x.shape() else {
        return Err(shape_err!("max pool input must be rank 4"));
    };
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let planes = out_shape[0] * out_shape[1];
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &data[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(plane[(oy * s + ky) * w + ox * s + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::from_f32(out_shape, out)
}

fn global_avg_pool(x: &Tensor, data: &[f32], out_shape: Vec<usize>, reduction: ReductionOrder) -> Result<Tensor> {
    let plane = x.shape()[2] * x.shape()[3];
    let count = plane as f32;
    let out = data.chunks_exact(plane).map(|c| reduction.sum_unchecked(c) / count).collect();
    Tensor::from_f32(out_shape, out)
}

fn softmax(x: &Tensor, data: &[f32], axis: usize, reduction: ReductionOrder) -> Result<Tensor> {
    let shape = x.shape();
    let len = shape[axis];
    let stride = strides_of(shape)[axis];
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0f32; data.len()];
    let mut exps = vec![0.0f32; len];
    for o in 0..outer {
        for inner in 0..stride {
            let at = |j: usize| o * len * stride + j * stride + inner;
            let m = (0..len).map(|j| data[at(j)]).fold(f32::NEG_INFINITY, f32::max);
            for (j, e) in exps.iter_mut().enumerate() {
                *e = libm::expf(data[at(j)] - m);
            }
            let denom = reduction.sum_unchecked(&exps);
            for (j, e) in exps.iter().enumerate() {
                out[at(j)] = e / denom;
            }
        }
    }
    Tensor::from_f32(shape.to_vec(), out)
}

fn argmax_channel(x: &Tensor, data: &[f32], out_shape: Vec<usize>) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else {
        return Err(shape_err!("argmax input must be rank 4"));
    };
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = data[b * c * plane + p];
            for ch in 1..c {
                let v = data[(b * c + ch) * plane + p];
                if v > best_v {
                    best = ch;
                    best_v = v;
                }
            }
            out.push(best as f32);
        }
    }
    Tensor::from_f32(out_shape, out)
}

/// Decodes a flat `(x1, y1, x2, y2)*` buffer into boxes.
pub fn decode_boxes(coords: &[f32]) -> Vec<BoundingBox> {
    coords
        .chunks_exact(4)
        .map(|c| BoundingBox::new(f64::from(c[0]), f64::from(c[1]), f64::from(c[2]), f64::from(c[3])))
        .collect()
}

fn nms_kernel(coords: &[f32], raw_scores: &[f32], iou_threshold: f64, sem: KernelSemantics) -> Result<Tensor> {
    let boxes_in = decode_boxes(coords);
    let scores_in: Vec<f64> = raw_scores.iter().map(|&s| f64::from(s)).collect();
    let order: Vec<usize> =
        if sem.pre_nms_sort { boxes::pre_nms_sort(&boxes_in, &scores_in) } else { (0..scores_in.len()).collect() };
    let sorted_boxes: Vec<BoundingBox> = order.iter().map(|&i| boxes_in[i]).collect();
    let sorted_scores: Vec<f64> = order.iter().map(|&i| scores_in[i]).collect();
    let kept = boxes::nms(&sorted_boxes, &sorted_scores, iou_threshold, sem.nms_order, sem.pre_nms_sort)?;
    let mut out = Vec::with_capacity(kept.len() * 5);
    for k in &kept {
        let i = order[*k];
        out.extend_from_slice(&coords[i * 4..i * 4 + 4]);
        out.push(raw_scores[i]);
    }
    Tensor::from_f32(vec![kept.len(), 5], out)
}
