#![allow(dead_code)]

use proptest::prelude::*;
use vsiv::dataset::{Dataset, PairId};

/// Random dataset with n rows, K instrument and J treatment values.
/// Outcomes come from a small grid so ties are common.
pub fn dataset(max_n: usize, ks: std::ops::RangeInclusive<usize>, js: Vec<usize>) -> impl Strategy<Value = Dataset> {
    (2..=max_n, ks, proptest::sample::select(js), 2usize..12).prop_flat_map(|(n, k, j, levels)| {
        (
            proptest::collection::vec(0..levels, n),
            proptest::collection::vec(0..j, n),
            proptest::collection::vec(0..k, n),
            Just((j, k)),
        )
            .prop_map(|(y, d, z, (j, k))| {
                let y = y.into_iter().map(|v| v as f64 * 0.5 - 1.0).collect();
                Dataset::from_indices(y, d, z, j, k).unwrap()
            })
    })
}

/// Continuous outcomes, every instrument value observed.
pub fn dense_dataset(min_n: usize, max_n: usize, ks: std::ops::RangeInclusive<usize>, j: usize) -> impl Strategy<Value = Dataset> {
    (min_n..=max_n, ks).prop_flat_map(move |(n, k)| {
        (
            proptest::collection::vec(-3.0f64..3.0, n),
            proptest::collection::vec(0..j, n),
            proptest::collection::vec(0..k, n - k),
            Just(k),
        )
            .prop_map(move |(y, d, zrest, k)| {
                let z: Vec<usize> = (0..k).chain(zrest).collect();
                Dataset::from_indices(y, d, z, j, k).unwrap()
            })
    })
}

pub fn all_pairs(k: usize) -> Vec<PairId> {
    let mut out = Vec::new();
    for a in 0..k {
        for b in 0..k {
            if a != b {
                out.push(PairId::new(a, b).unwrap());
            }
        }
    }
    out
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
