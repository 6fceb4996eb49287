use num_complex::Complex64;
use proptest::prelude::*;
use sfpe_core::equation::complex_block;
use sfpe_core::{min_gain, op_norm, spectral_summary, CoefficientDraw, Interval, SquareMatrix};

fn rotation(theta: f64) -> [f64; 4] {
    let (s, c) = theta.sin_cos();
    [c, -s, s, c]
}

fn mul2(a: &[f64; 4], b: &[f64; 4]) -> Vec<f64> {
    vec![
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn gain_times_norm_is_abs_det(e in prop::array::uniform4(-10.0f64..10.0)) {
        let m = SquareMatrix::new(2, e.to_vec()).unwrap();
        let (g, o) = (min_gain(&m).unwrap(), op_norm(&m).unwrap());
        let det = (e[0] * e[3] - e[1] * e[2]).abs();
        prop_assert!(g <= o);
        prop_assert!((g * o - det).abs() <= 1e-10 * (1.0 + o * o));
    }

    #[test]
    fn scaled_rotations_have_equal_singular_values(theta in -7.0f64..7.0, scale in 0.0f64..5.0, flip in any::<bool>()) {
        let mut r = rotation(theta);
        if flip {
            r[1] = -r[1];
            r[3] = -r[3];
        }
        let m = SquareMatrix::new(2, r.iter().map(|x| x * scale).collect()).unwrap();
        prop_assert!((min_gain(&m).unwrap() - scale).abs() <= 1e-12 * (1.0 + scale));
        prop_assert!((op_norm(&m).unwrap() - scale).abs() <= 1e-12 * (1.0 + scale));
    }

    #[test]
    fn non_orthogonal_matrices_separate(theta in -3.0f64..3.0, a in 0.1f64..3.0, b in 0.1f64..3.0) {
        prop_assume!((a - b).abs() > 1e-3);
        let m = SquareMatrix::new(2, mul2(&rotation(theta), &[a, 0.0, 0.0, b])).unwrap();
        prop_assert!(min_gain(&m).unwrap() < op_norm(&m).unwrap());
    }

    #[test]
    fn rotations_do_not_change_singular_values(e in prop::array::uniform4(-3.0f64..3.0), t1 in -3.0f64..3.0, t2 in -3.0f64..3.0) {
        let m = SquareMatrix::new(2, e.to_vec()).unwrap();
        let rotated = SquareMatrix::new(2, mul2(&rotation(t1), &e.try_into().unwrap())).unwrap();
        let rotated = SquareMatrix::new(2, mul2(&rotated.entries().try_into().unwrap(), &rotation(t2))).unwrap();
        prop_assert!((min_gain(&m).unwrap() - min_gain(&rotated).unwrap()).abs() <= 1e-10);
        prop_assert!((op_norm(&m).unwrap() - op_norm(&rotated).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn complex_embedding_keeps_modulus(re in -5.0f64..5.0, im in -5.0f64..5.0) {
        let z = Complex64::new(re, im);
        let m = SquareMatrix::new(2, complex_block(z).to_vec()).unwrap();
        prop_assert!((min_gain(&m).unwrap() - z.norm()).abs() <= 1e-12 * (1.0 + z.norm()));
        prop_assert!((op_norm(&m).unwrap() - z.norm()).abs() <= 1e-12 * (1.0 + z.norm()));
    }

    #[test]
    fn summary_ignores_term_order(
        coeffs in prop::collection::vec(-2.0f64..2.0, 1..8),
        seed in any::<u64>(),
    ) {
        let draw = CoefficientDraw::scalar(&coeffs, 0.0).unwrap();
        let mut shuffled = coeffs.clone();
        // deterministic Fisher-Yates driven by the seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let other = CoefficientDraw::scalar(&shuffled, 0.0).unwrap();
        let iv = Interval::open_closed(0.0, 1.0);
        prop_assert_eq!(spectral_summary(&draw, iv), spectral_summary(&other, iv));
    }
}

#[test]
fn higher_dimensions_match_known_values() {
    let m = SquareMatrix::from_rows(&[vec![0.0, 2.0, 0.0], vec![0.5, 0.0, 0.0], vec![0.0, 0.0, -1.0]]).unwrap();
    assert!((min_gain(&m).unwrap() - 0.5).abs() < 1e-12);
    assert!((op_norm(&m).unwrap() - 2.0).abs() < 1e-12);
    let d4 = SquareMatrix::new(4, (0..16).map(|k| if k % 5 == 0 { (k / 5 + 1) as f64 } else { 0.0 }).collect()).unwrap();
    assert!((min_gain(&d4).unwrap() - 1.0).abs() < 1e-12);
    assert!((op_norm(&d4).unwrap() - 4.0).abs() < 1e-12);
}
