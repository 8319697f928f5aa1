//! Input preprocessing: per-channel normalization and bilinear resizing.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{DType, Tensor};

/// `out[c] = (x[c] - means[c]) / stds[c]` over the channel axis.
///
/// The channel axis is 1 for rank-4 `(N, C, H, W)` tensors and 0 for rank-3
/// `(C, H, W)` tensors.
pub fn normalize(x: &Tensor, means: &[f64], stds: &[f64]) -> Result<Tensor> {
    if let Some(i) = stds.iter().position(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!("stds[{i}] must be finite and nonzero")));
    }
    let (batch, channels, plane) = match *x.shape() {
        [n, c, h, w] => (n, c, h * w),
        [c, h, w] => (1, c, h * w),
        _ => return Err(shape_err!("normalize expects rank 3 or 4, got {:?}", x.shape())),
    };
    if means.len() != channels || stds.len() != channels {
        return Err(shape_err!("{channels} channels but {} means / {} stds", means.len(), stds.len()));
    }
    let shape = x.shape().to_vec();
    let channel_of = |i: usize| (i / plane) % channels;
    debug_assert_eq!(batch * channels * plane, x.numel());
    match x.dtype() {
        DType::F32 => {
            let src = x.as_f32().unwrap_or_default();
            let out = src
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = channel_of(i);
                    (v - means[c] as f32) / stds[c] as f32
                })
                .collect();
            Tensor::from_f32(shape, out)
        }
        DType::F64 => {
            let src = x.as_f64().unwrap_or_default();
            let out = src
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = channel_of(i);
                    (v - means[c]) / stds[c]
                })
                .collect();
            Tensor::from_f64(shape, out)
        }
    }
}

/// Source coordinate and blend weight for one output index, half-pixel
/// centers (`align_corners = false`).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (libm::floor(src) as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

/// Bilinear resize of a rank-4 `(N, C, H, W)` tensor to `(N, C, out_h, out_w)`.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else {
        return Err(shape_err!("bilinear resize expects rank 4, got {:?}", x.shape()));
    };
    if out_h == 0 || out_w == 0 {
        return Err(shape_err!("output extents must be >= 1, got {out_h}x{out_w}"));
    }
    if h == 0 || w == 0 {
        return Err(shape_err!("cannot resize an empty plane {h}x{w}"));
    }
    let shape = alloc::vec![n, c, out_h, out_w];
    if out_h == h && out_w == w {
        return Ok(x.clone());
    }
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        let base = plane * h * w;
        let at = |y: usize, xx: usize| x.get_f64(base + y * w + xx);
        for ty in &ys {
            for tx in &xs {
                let top = at(ty.lo, tx.lo) * (1.0 - tx.frac) + at(ty.lo, tx.hi) * tx.frac;
                let bottom = at(ty.hi, tx.lo) * (1.0 - tx.frac) + at(ty.hi, tx.hi) * tx.frac;
                out.push(top * (1.0 - ty.frac) + bottom * ty.frac);
            }
        }
    }
    match x.dtype() {
        DType::F32 => Tensor::from_f32(shape, out.into_iter().map(|v| v as f32).collect()),
        DType::F64 => Tensor::from_f64(shape, out),
    }
}

/// Target extent for [`adjust_to_multiple`]: `max(m, floor(len / m) * m)`.
pub fn multiple_extent(len: usize, m: usize) -> usize {
    m.max((len / m) * m)
}

pub fn adjust_to_multiple(x: &Tensor, m: usize) -> Result<Tensor> {
    let [_, _, h, w] = *x.shape() else {
        return Err(shape_err!("adjust_to_multiple expects rank 4, got {:?}", x.shape()));
    };
    if m == 0 {
        return Err(Error::InvalidConfig("resize multiple must be >= 1".into()));
    }
    let (nh, nw) = (multiple_extent(h, m), multiple_extent(w, m));
    if nh == h && nw == w {
        return Ok(x.clone());
    }
    bilinear_resize(x, nh, nw)
}
