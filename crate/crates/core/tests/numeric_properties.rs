use driftcheck_core::precision::{round_f32_to_half, round_to_half_precision};
use driftcheck_core::preprocess::{adjust_to_multiple, bilinear_resize};
use driftcheck_core::reduce::{sum_pairwise, sum_sequential};
use driftcheck_core::{allclose_elementwise, allclose_eq1, compute_diff_stats, Tensor, ToleranceSpec};
use proptest::prelude::*;

fn pair() -> impl Strategy<Value = (Vec<usize>, Vec<f32>, Vec<f32>)> {
    proptest::collection::vec(1usize..4, 1..=4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (Just(shape), proptest::collection::vec(-1e3f32..1e3, n), proptest::collection::vec(-1e-2f32..1e-2, n))
            .prop_map(|(s, r, d)| {
                let t = r.iter().zip(&d).map(|(a, b)| a + b).collect();
                (s, r, t)
            })
    })
}

fn tol() -> impl Strategy<Value = ToleranceSpec> {
    (0.0f64..1e-2, 0.0f64..1e-4).prop_map(|(a, r)| ToleranceSpec::new(a, r).unwrap())
}

proptest! {
    #[test]
    fn eq1_is_the_stats_inequality((shape, r, t) in pair(), tol in tol()) {
        let (rt, tt) = (Tensor::from_f32(shape.clone(), r).unwrap(), Tensor::from_f32(shape, t).unwrap());
        let s = compute_diff_stats(&rt, &tt).unwrap();
        prop_assert_eq!(
            allclose_eq1(&rt, &tt, tol).unwrap(),
            s.max_abs_diff <= tol.atol + tol.rtol * s.ref_inf_norm
        );
        prop_assert!(s.mae <= s.max_abs_diff && s.p95_abs_diff <= s.max_abs_diff);
    }

    #[test]
    fn reflexive_and_monotone_in_atol((shape, r, t) in pair(), tol in tol(), extra in 0.0f64..1.0) {
        let (rt, tt) = (Tensor::from_f32(shape.clone(), r).unwrap(), Tensor::from_f32(shape, t).unwrap());
        prop_assert!(allclose_eq1(&rt, &rt, tol).unwrap());
        prop_assert!(allclose_elementwise(&rt, &rt, tol).unwrap());
        let looser = ToleranceSpec::new(tol.atol + extra, tol.rtol).unwrap();
        if allclose_eq1(&rt, &tt, tol).unwrap() {
            prop_assert!(allclose_eq1(&rt, &tt, looser).unwrap());
        }
        if allclose_elementwise(&rt, &tt, tol).unwrap() {
            prop_assert!(allclose_elementwise(&rt, &tt, looser).unwrap());
        }
    }

    #[test]
    fn half_rounding_is_idempotent(v in proptest::num::f32::NORMAL | proptest::num::f32::SUBNORMAL | proptest::num::f32::ZERO) {
        let once = round_f32_to_half(v);
        prop_assert_eq!(round_f32_to_half(once).to_bits(), once.to_bits());
        let t = Tensor::from_f32(vec![1], vec![v]).unwrap();
        let r1 = round_to_half_precision(&t).unwrap();
        prop_assert!(round_to_half_precision(&r1).unwrap().bitwise_eq(&r1));
    }

    #[test]
    fn resize_to_same_size_is_identity(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let x = driftcheck_core::builders::synthetic_input(seed, "x", vec![1, 2, h, w]).unwrap();
        prop_assert!(bilinear_resize(&x, h, w).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn adjusted_extents_are_multiples(h in 1usize..70, w in 1usize..70, m in 1usize..40) {
        let x = Tensor::zeros(vec![1, 1, h, w], driftcheck_core::DType::F32).unwrap();
        let y = adjust_to_multiple(&x, m).unwrap();
        let (oh, ow) = (y.shape()[2], y.shape()[3]);
        prop_assert!(oh % m == 0 && ow % m == 0 && oh >= m && ow >= m);
    }

    #[test]
    fn reductions_exact_on_small_integers(v in proptest::collection::vec(-2000i32..2000, 1..500)) {
        let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let exact: i64 = v.iter().map(|&x| i64::from(x)).sum();
        prop_assert_eq!(sum_sequential(&f).unwrap(), exact as f32);
        prop_assert_eq!(sum_pairwise(&f).unwrap(), exact as f32);
    }

    #[test]
    fn reductions_track_f64(v in proptest::collection::vec(-1.0f32..1.0, 1..2000)) {
        let exact: f64 = v.iter().map(|&x| f64::from(x)).sum();
        let abs: f64 = v.iter().map(|&x| f64::from(x).abs()).sum();
        // n * eps * sum|x| is the textbook worst case for recursive summation
        let bound = v.len() as f64 * f64::from(f32::EPSILON) * abs;
        prop_assert!((f64::from(sum_sequential(&v).unwrap()) - exact).abs() <= bound);
        prop_assert!((f64::from(sum_pairwise(&v).unwrap()) - exact).abs() <= bound);
    }
}
