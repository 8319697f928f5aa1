//! Scalar-loop closeness verdicts over explicit multi-indices.

/// Row-major multi-index walk over `shape`, yielding flat offsets.
fn offsets(shape: &[usize]) -> Vec<usize> {
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        let mut off = 0;
        for (d, &i) in idx.iter().enumerate() {
            off = off * shape[d] + i;
        }
        out.push(off);
        let mut d = shape.len();
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub fn eq1(shape: &[usize], r: &[f32], t: &[f32], atol: f64, rtol: f64) -> bool {
    let mut worst = 0.0f64;
    let mut norm = 0.0f64;
    for o in offsets(shape) {
        let (a, b) = (f64::from(r[o]), f64::from(t[o]));
        if (a - b).abs() > worst {
            worst = (a - b).abs();
        }
        if a.abs() > norm {
            norm = a.abs();
        }
    }
    worst <= atol + rtol * norm
}

pub fn elementwise(shape: &[usize], r: &[f32], t: &[f32], atol: f64, rtol: f64) -> bool {
    for o in offsets(shape) {
        let (a, b) = (f64::from(r[o]), f64::from(t[o]));
        if (a - b).abs() > atol + rtol * a.abs() {
            return false;
        }
    }
    true
}
