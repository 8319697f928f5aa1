//! Reduced-precision simulation: round `f32` values through IEEE binary16.

use half::f16;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest finite binary16 value.
pub const HALF_MAX: f32 = 65504.0;

/// Round to the nearest binary16 value (ties to even), saturating at ±65504.
pub fn round_f32_to_half(value: f32) -> f32 {
    let rounded = f16::from_f32(value).to_f32();
    if rounded.is_infinite() && value.is_finite() {
        HALF_MAX.copysign(value)
    } else {
        rounded
    }
}

pub fn round_slice_to_half(values: &mut [f32]) {
    for v in values {
        *v = round_f32_to_half(*v);
    }
}

pub fn round_to_half_precision(x: &Tensor) -> Result<Tensor> {
    let mut out = x.clone();
    let data = out.as_f32_mut().ok_or_else(|| Error::DType("half-precision rounding needs an f32 tensor".into()))?;
    round_slice_to_half(data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn representable_values_unchanged() {
        assert_eq!(round_f32_to_half(1.0), 1.0);
        assert_eq!(round_f32_to_half(-0.5), -0.5);
        assert_eq!(round_f32_to_half(65504.0), 65504.0);
    }

    #[test]
    fn rounds_to_grid_near_one() {
        // spacing just above 1.0 is 2^-10
        assert_eq!(round_f32_to_half(1.0001), 1.0);
        let ulp = 2f32.powi(-10);
        assert_eq!(round_f32_to_half(1.0 + ulp), 1.0 + ulp);
        // exact midpoint 1 + 2^-11 ties to even (1.0)
        assert_eq!(round_f32_to_half(1.0 + 0.00048828125), 1.0);
        // midpoint 1 + 3*2^-11 ties to even (1 + 2^-9)
        assert_eq!(round_f32_to_half(1.0 + 3.0 * 0.00048828125), 1.0 + 2.0 * ulp);
    }

    #[test]
    fn saturates_instead_of_overflowing() {
        assert_eq!(round_f32_to_half(70000.0), 65504.0);
        assert_eq!(round_f32_to_half(-1e30), -65504.0);
    }

    #[test]
    fn tensor_form_rejects_f64() {
        let t = Tensor::from_f64(vec![1], vec![1.0]).unwrap();
        assert!(round_to_half_precision(&t).is_err());
        let t = Tensor::from_f32(vec![2], vec![1.0001, 70000.0]).unwrap();
        let r = round_to_half_precision(&t).unwrap();
        assert_eq!(r.as_f32().unwrap(), &[1.0, 65504.0]);
    }

    proptest! {
        #[test]
        fn idempotent(x in -1e6f32..1e6f32) {
            let once = round_f32_to_half(x);
            prop_assert_eq!(round_f32_to_half(once).to_bits(), once.to_bits());
        }

        #[test]
        fn relative_error_bounded(x in 1e-3f32..6e4f32) {
            // binary16 unit roundoff is 2^-11 for normal values
            let r = round_f32_to_half(x);
            prop_assert!(((r - x) / x).abs() <= 0.00048828125 * 1.0001);
        }
    }
}
