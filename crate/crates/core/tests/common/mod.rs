#![allow(dead_code)]

use proptest::prelude::*;
use roughdyadic::GroupTensor2;

/// `max |a − b| / max(1, max |b|)`
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn tensor_rel_err(a: &GroupTensor2, b: &GroupTensor2) -> f64 {
    rel_err(a.level1(), b.level1()).max(rel_err(a.level2(), b.level2()))
}

pub fn tensor(d: usize) -> impl Strategy<Value = GroupTensor2> {
    (
        prop::collection::vec(-10.0f64..10.0, d),
        prop::collection::vec(-10.0f64..10.0, d * d),
    )
        .prop_map(move |(a, b)| GroupTensor2::new(d, a, b).unwrap())
}

pub fn tensors(count: usize) -> impl Strategy<Value = Vec<GroupTensor2>> {
    (1usize..=4).prop_flat_map(move |d| prop::collection::vec(tensor(d), count))
}
