mod common;

use mixedindep_core::{
    d_statistic, i_statistic, standardized_i, t_statistic, DSigma, Error, MixedSample, Mode,
    WeightParams,
};
use proptest::prelude::*;

fn all_values(sample: &MixedSample, wp: &WeightParams, mode: Mode) -> Vec<Option<f64>> {
    let sigma = DSigma::uniform(0.5, sample.r1(), sample.r2()).unwrap();
    vec![
        Some(i_statistic(sample, wp, mode).unwrap()),
        Some(t_statistic(sample, wp, mode).unwrap()),
        match standardized_i(sample, wp, mode) {
            Ok(v) => Some(v),
            Err(Error::DegenerateVariance | Error::TooFewRows { .. }) => None,
            Err(e) => panic!("{e}"),
        },
        Some(d_statistic(sample, &sigma, mode).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn t_is_nonnegative((sample, wp) in common::sample_and_weights(12, 3, 3), mode in common::mode()) {
        prop_assert!(t_statistic(&sample, &wp, mode).unwrap() >= -1e-12);
    }

    #[test]
    fn d_is_nonnegative(sample in common::small_sample(10, 2, 2, 8), mode in common::mode()) {
        let sigma = DSigma::uniform(0.5, sample.r1(), sample.r2()).unwrap();
        prop_assert!(d_statistic(&sample, &sigma, mode).unwrap() >= -1e-9);
    }

    #[test]
    fn scalar_i_is_bounded((sample, wp) in common::sample_and_weights(12, 1, 1)) {
        let (a, b) = (wp.a()[0], wp.b()[0]);
        let i = i_statistic(&sample, &wp, Mode::TwoVector).unwrap();
        prop_assert!(i.abs() < 1.0 / (a * (b + 1.0)));
    }

    #[test]
    fn modes_coincide_for_scalar_blocks((sample, wp) in common::sample_and_weights(12, 1, 1)) {
        let two = all_values(&sample, &wp, Mode::TwoVector);
        let total = all_values(&sample, &wp, Mode::Total);
        for (u, v) in two.iter().zip(&total) {
            match (u, v) {
                (Some(u), Some(v)) => prop_assert!((u - v).abs() <= 1e-14 * u.abs().max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "modes disagree on degeneracy"),
            }
        }
    }

    #[test]
    fn row_order_does_not_matter(
        (sample, wp) in common::sample_and_weights(9, 2, 2),
        mode in common::mode(),
        order_seed in any::<u64>(),
    ) {
        let n = sample.n();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = order_seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let shuffled = sample.reorder_rows(&order).unwrap();
        let before = all_values(&sample, &wp, mode);
        let after = all_values(&shuffled, &wp, mode);
        for (u, v) in before.iter().zip(&after) {
            match (u, v) {
                (Some(u), Some(v)) => prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{u} vs {v}"),
                (None, None) => {}
                _ => prop_assert!(false, "degeneracy changed under reordering"),
            }
        }
    }

    #[test]
    fn repeated_calls_agree_bitwise(
        (sample, wp) in common::sample_and_weights(9, 2, 2),
        other in common::small_sample(9, 2, 2, 20),
        mode in common::mode(),
    ) {
        let first = all_values(&sample, &wp, mode);
        // Work on an unrelated sample in between must leave no trace.
        let other_wp = WeightParams::uniform(0.7, 3.0, other.r1(), other.r2()).unwrap();
        let _ = all_values(&other, &other_wp, mode);
        let second = all_values(&sample, &wp, mode);
        prop_assert_eq!(
            first.iter().map(|v| v.map(f64::to_bits)).collect::<Vec<_>>(),
            second.iter().map(|v| v.map(f64::to_bits)).collect::<Vec<_>>()
        );
    }
}
