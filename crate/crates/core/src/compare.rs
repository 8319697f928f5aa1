//! Tensor closeness and diff statistics.
//!
//! Two predicates are provided. [`allclose_eq1`] is the global form
//! `max|ref - tgt| <= atol + rtol * max|ref|`, and [`allclose_elementwise`]
//! checks `|r - t| <= atol + rtol * |r|` at every position. Neither implies
//! the other. All arithmetic here is done in `f64`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSpec {
    pub atol: f64,
    pub rtol: f64,
}

pub const DEFAULT_ATOL: f64 = 1e-5;
pub const DEFAULT_RTOL: f64 = 1e-5;

impl Default for ToleranceSpec {
    fn default() -> Self {
        Self { atol: DEFAULT_ATOL, rtol: DEFAULT_RTOL }
    }
}

impl ToleranceSpec {
    pub fn new(atol: f64, rtol: f64) -> Result<Self> {
        if !(atol >= 0.0 && atol.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("atol must be finite and >= 0, got {atol}")));
        }
        if !(rtol >= 0.0 && rtol.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("rtol must be finite and >= 0, got {rtol}")));
        }
        Ok(Self { atol, rtol })
    }

    /// Global threshold `atol + rtol * ref_inf_norm`.
    pub fn threshold(&self, ref_inf_norm: f64) -> f64 {
        self.atol + self.rtol * ref_inf_norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CloseMode {
    #[default]
    Eq1,
    Elementwise,
}

impl CloseMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Eq1 => "eq1",
            Self::Elementwise => "elementwise",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "eq1" => Some(Self::Eq1),
            "elementwise" => Some(Self::Elementwise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffStats {
    pub max_abs_diff: f64,
    pub mae: f64,
    /// Nearest-rank 95th percentile of the absolute differences.
    pub p95_abs_diff: f64,
    pub ref_inf_norm: f64,
    pub numel: usize,
}

impl DiffStats {
    /// Field-wise worst case of two comparisons; element counts add up.
    pub fn worst_of(&self, other: &DiffStats) -> DiffStats {
        DiffStats {
            max_abs_diff: self.max_abs_diff.max(other.max_abs_diff),
            mae: self.mae.max(other.mae),
            p95_abs_diff: self.p95_abs_diff.max(other.p95_abs_diff),
            ref_inf_norm: self.ref_inf_norm.max(other.ref_inf_norm),
            numel: self.numel + other.numel,
        }
    }
}

/// 1-based nearest rank `ceil(p/100 * n)` for an integer percentile.
pub fn nearest_rank(percent: usize, n: usize) -> usize {
    (percent * n).div_ceil(100).max(1)
}

pub fn compute_diff_stats(reference: &Tensor, target: &Tensor) -> Result<DiffStats> {
    reference.check_same_layout(target)?;
    let n = reference.numel();
    if n == 0 {
        return Err(Error::Shape("diff statistics need at least one element".into()));
    }
    let mut diffs = Vec::with_capacity(n);
    let mut ref_inf_norm = 0.0f64;
    let mut sum = 0.0f64;
    for i in 0..n {
        let r = reference.get_f64(i);
        let d = (r - target.get_f64(i)).abs();
        ref_inf_norm = ref_inf_norm.max(r.abs());
        sum += d;
        diffs.push(d);
    }
    let max_abs_diff = diffs.iter().copied().fold(0.0f64, f64::max);
    let rank = nearest_rank(95, n);
    let (_, p95, _) = diffs.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(DiffStats { max_abs_diff, mae: sum / n as f64, p95_abs_diff: *p95, ref_inf_norm, numel: n })
}

pub fn allclose_eq1(reference: &Tensor, target: &Tensor, tol: ToleranceSpec) -> Result<bool> {
    reference.check_same_layout(target)?;
    let mut max_diff = 0.0f64;
    let mut ref_inf_norm = 0.0f64;
    for i in 0..reference.numel() {
        let r = reference.get_f64(i);
        max_diff = max_diff.max((r - target.get_f64(i)).abs());
        ref_inf_norm = ref_inf_norm.max(r.abs());
    }
    Ok(max_diff <= tol.threshold(ref_inf_norm))
}

pub fn allclose_elementwise(reference: &Tensor, target: &Tensor, tol: ToleranceSpec) -> Result<bool> {
    reference.check_same_layout(target)?;
    Ok((0..reference.numel()).all(|i| {
        let r = reference.get_f64(i);
        (r - target.get_f64(i)).abs() <= tol.atol + tol.rtol * r.abs()
    }))
}

pub fn allclose(reference: &Tensor, target: &Tensor, tol: ToleranceSpec, mode: CloseMode) -> Result<bool> {
    match mode {
        CloseMode::Eq1 => allclose_eq1(reference, target, tol),
        CloseMode::Elementwise => allclose_elementwise(reference, target, tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn t(values: &[f64]) -> Tensor {
        Tensor::from_f64(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn identical_tensors_have_zero_stats() {
        let s = compute_diff_stats(&t(&[1.0, 2.0, 3.0]), &t(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(s.max_abs_diff, 0.0);
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.p95_abs_diff, 0.0);
        assert_eq!(s.ref_inf_norm, 3.0);
        assert_eq!(s.numel, 3);
    }

    #[test]
    fn single_element_stats() {
        let s = compute_diff_stats(&t(&[1.0]), &t(&[1.5])).unwrap();
        assert_eq!((s.max_abs_diff, s.mae, s.p95_abs_diff), (0.5, 0.5, 0.5));
    }

    #[test]
    fn p95_nearest_rank_over_hundred() {
        let r: Vec<f64> = vec![0.0; 100];
        // shuffle-ish order so selection has work to do
        let g: Vec<f64> = (1..=100).map(|k| ((k * 37) % 100 + 1) as f64 / 100.0).collect();
        let s = compute_diff_stats(&t(&r), &t(&g)).unwrap();
        assert_eq!(s.p95_abs_diff, 0.95);
        assert_eq!(s.max_abs_diff, 1.0);
        assert_eq!(nearest_rank(95, 100), 95);
        assert_eq!(nearest_rank(95, 1), 1);
        assert_eq!(nearest_rank(95, 21), 20);
    }

    #[test]
    fn empty_tensors_rejected() {
        let e = Tensor::from_f64(vec![0], vec![]).unwrap();
        assert!(matches!(compute_diff_stats(&e, &e), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[1.0]);
        let tol = ToleranceSpec::default();
        assert!(matches!(allclose_eq1(&a, &b, tol), Err(Error::Shape(_))));
        assert!(matches!(allclose_elementwise(&a, &b, tol), Err(Error::Shape(_))));
        assert!(matches!(compute_diff_stats(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn eq1_threshold_uses_reference_norm() {
        let tol = ToleranceSpec::new(1e-6, 1e-5).unwrap();
        // 1.1e-5 >= 5e-6
        assert!(allclose_eq1(&t(&[1.0]), &t(&[1.000005]), tol).unwrap());
        let tol = ToleranceSpec::new(1e-5, 1e-5).unwrap();
        assert!(!allclose_eq1(&t(&[0.0]), &t(&[1e-4]), tol).unwrap());
    }

    #[test]
    fn the_two_modes_diverge() {
        let tol = ToleranceSpec::new(1e-5, 1e-5).unwrap();
        let r = t(&[10.0, 0.0]);
        let g = t(&[10.0, 1e-4]);
        assert!(!allclose_elementwise(&r, &g, tol).unwrap());
        assert!(allclose_eq1(&r, &g, tol).unwrap());
        let tol = ToleranceSpec::new(1e-6, 0.0).unwrap();
        assert!(allclose_elementwise(&t(&[1.0]), &t(&[1.0 + 1e-9]), tol).unwrap());
    }

    #[test]
    fn tolerance_validation() {
        assert!(ToleranceSpec::new(-1.0, 0.0).is_err());
        assert!(ToleranceSpec::new(0.0, f64::NAN).is_err());
        assert_eq!(ToleranceSpec::default(), ToleranceSpec { atol: 1e-5, rtol: 1e-5 });
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        proptest::collection::vec((-100.0f64..100.0, -1e-3f64..1e-3), 1..64)
            .prop_map(|v| v.into_iter().map(|(a, d)| (a, a + d)).unzip())
    }

    proptest! {
        #[test]
        fn reflexive(v in proptest::collection::vec(-1e3f64..1e3, 1..32)) {
            let a = t(&v);
            let tol = ToleranceSpec::new(0.0, 0.0).unwrap();
            prop_assert!(allclose_eq1(&a, &a, tol).unwrap());
            prop_assert!(allclose_elementwise(&a, &a, tol).unwrap());
        }

        #[test]
        fn monotone_in_atol((r, g) in pair(), a in 0.0f64..1e-3, extra in 0.0f64..1e-3) {
            let (r, g) = (t(&r), t(&g));
            for mode in [CloseMode::Eq1, CloseMode::Elementwise] {
                let lo = allclose(&r, &g, ToleranceSpec::new(a, 1e-5).unwrap(), mode).unwrap();
                let hi = allclose(&r, &g, ToleranceSpec::new(a + extra, 1e-5).unwrap(), mode).unwrap();
                prop_assert!(!lo || hi);
            }
        }

        #[test]
        fn stats_invariants((r, g) in pair()) {
            let s = compute_diff_stats(&t(&r), &t(&g)).unwrap();
            prop_assert!(s.mae >= 0.0 && s.mae <= s.max_abs_diff);
            prop_assert!(s.p95_abs_diff >= 0.0 && s.p95_abs_diff <= s.max_abs_diff);
            let tol = ToleranceSpec::default();
            prop_assert_eq!(
                allclose_eq1(&t(&r), &t(&g), tol).unwrap(),
                s.max_abs_diff <= tol.threshold(s.ref_inf_norm)
            );
        }
    }
}
