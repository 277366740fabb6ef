//! Property tests for the convolution calculus: the algebraic identities
//! that hold on the grid for arbitrary bounded-variation inputs.

use proptest::prelude::*;

use prwlab_core::gridfn::{
    convolution_power, stieltjes_convolve, total_variation, GridFunction,
};

const H: f64 = 0.125;
const LEN: usize = 48;

/// Nondecreasing nonnegative grid function built from random increments.
fn monotone_grid() -> impl Strategy<Value = GridFunction> {
    prop::collection::vec(0.0f64..0.5, LEN).prop_map(|incs| {
        let mut acc = 0.0;
        let values = incs
            .into_iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        GridFunction::new(H, values).unwrap()
    })
}

/// Signed bounded-variation grid function.
fn bv_grid() -> impl Strategy<Value = GridFunction> {
    prop::collection::vec(-0.5f64..0.5, LEN).prop_map(|incs| {
        let mut acc = 0.0;
        let values = incs
            .into_iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        GridFunction::new(H, values).unwrap()
    })
}

fn max_scale(g: &GridFunction) -> f64 {
    g.values().iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_is_associative(a in monotone_grid(), b in monotone_grid(), c in monotone_grid()) {
        let left = stieltjes_convolve(&stieltjes_convolve(&a, &b).unwrap(), &c).unwrap();
        let right = stieltjes_convolve(&a, &stieltjes_convolve(&b, &c).unwrap()).unwrap();
        let scale = max_scale(&left);
        for (x, y) in left.values().iter().zip(right.values()) {
            prop_assert!((x - y).abs() <= 1e-10 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn monotone_convolved_with_monotone_stays_monotone(a in monotone_grid(), b in monotone_grid()) {
        let w = stieltjes_convolve(&a, &b).unwrap();
        prop_assert!(w.is_monotone());
        let scale = max_scale(&w);
        let mut prev = w.left_value();
        for &x in w.values() {
            prop_assert!(x >= prev - 1e-12 * scale);
            prev = x;
        }
    }

    #[test]
    fn total_variation_is_submultiplicative(a in bv_grid(), b in bv_grid()) {
        // variation of a convolution never exceeds the product of variations
        let w = stieltjes_convolve(&a, &b).unwrap();
        let hi = w.t_end();
        let tv_w = total_variation(&w, 0.0, hi).unwrap();
        let tv_a = total_variation(&a, 0.0, hi).unwrap() + a.values()[0].abs();
        let tv_b = total_variation(&b, 0.0, hi).unwrap() + b.values()[0].abs();
        prop_assert!(tv_w <= tv_a * tv_b + 1e-9, "{tv_w} > {tv_a} * {tv_b}");
    }

    #[test]
    fn power_indices_add(v in monotone_grid(), i in 1u32..4, j in 1u32..4) {
        let direct = convolution_power(&v, i + j).unwrap();
        let split = stieltjes_convolve(
            &convolution_power(&v, i).unwrap(),
            &convolution_power(&v, j).unwrap(),
        )
        .unwrap();
        let scale = max_scale(&direct);
        let tol = 1e-8 * (i + j) as f64 * scale;
        for (x, y) in direct.values().iter().zip(split.values()) {
            prop_assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
        }
    }
}
