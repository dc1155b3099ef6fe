mod common;

use common::oracles::ged_oracle;

#[test]
fn exact_matches_enumeration_and_bounds_approximation() {
    let stats = ged_oracle(200, 4, 3);
    assert!(stats.exact_mismatch.is_empty(), "{:?}", stats.exact_mismatch);
    assert!(stats.approx_below_exact.is_empty(), "{:?}", stats.approx_below_exact);
    println!("approx == exact on {:.3} of pairs", stats.equal_fraction());
}
