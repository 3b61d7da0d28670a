#![allow(dead_code)]

use mixedindep_core::{MixedSample, Mode, WeightParams};
use proptest::prelude::*;

/// Small mixed samples: positive continuous cells, counts in `0..=max_count`.
pub fn small_sample(
    max_n: usize,
    max_r1: usize,
    max_r2: usize,
    max_count: u64,
) -> impl Strategy<Value = MixedSample> {
    (1..=max_n, 1..=max_r1, 1..=max_r2).prop_flat_map(move |(n, r1, r2)| {
        (
            prop::collection::vec(0.01f64..6.0, n * r1),
            prop::collection::vec(0..=max_count, n * r2),
        )
            .prop_map(move |(x, y)| MixedSample::from_flat(x, y, r1, r2).unwrap())
    })
}

pub fn weights_for(r1: usize, r2: usize) -> impl Strategy<Value = WeightParams> {
    (
        prop::collection::vec(0.2f64..5.0, r1),
        prop::collection::vec(0.2f64..5.0, r2),
    )
        .prop_map(|(a, b)| WeightParams::new(a, b).unwrap())
}

pub fn sample_and_weights(
    max_n: usize,
    max_r1: usize,
    max_r2: usize,
) -> impl Strategy<Value = (MixedSample, WeightParams)> {
    small_sample(max_n, max_r1, max_r2, 6).prop_flat_map(|s| {
        let (r1, r2) = (s.r1(), s.r2());
        (Just(s), weights_for(r1, r2))
    })
}

pub fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::TwoVector), Just(Mode::Total)]
}
