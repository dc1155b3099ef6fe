mod common;

use common::gradcheck::{full_loss_suite, primitive_suite};

#[test]
fn primitives_match_finite_differences() {
    let n = primitive_suite(100).unwrap();
    assert!(n > 10_000, "only {n} entries checked");
}

#[test]
fn full_loss_matches_finite_differences() {
    full_loss_suite(100).unwrap();
}
