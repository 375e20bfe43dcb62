//! End-to-end checks of interval endpoints on the bundled example against
//! externally reported values.

use crc_bounds::profile::{invert_pl_ci, PlConfig};
use crc_bounds::restrictions::{MeanVector, RestrictionSpec};
use crc_bounds::table::pwid_example;
use crc_bounds::tib::{invert_ci, TestConfig};

fn pwid_means() -> MeanVector {
    MeanVector::from_table(&pwid_example())
}

#[test]
fn pl_highest_order_gamma_tenth() {
    let spec = RestrictionSpec::highest_order(0.1).unwrap();
    let cfg = PlConfig { truncate_at_observed: true, ..Default::default() };
    let ci = invert_pl_ci(&pwid_means(), &spec, &cfg).unwrap();
    let lo = ci.interval_lo.unwrap();
    let hi = ci.interval_hi.unwrap();
    assert!((lo / 493.0 - 1.0).abs() < 0.02, "lo {lo}");
    assert!((hi / 2057.0 - 1.0).abs() < 0.02, "hi {hi}");
}

#[test]
fn pl_pairwise_agnostic_three() {
    let spec = RestrictionSpec::all_pairs(3, 1.0 / 3.0, 3.0).unwrap();
    let cfg = PlConfig { truncate_at_observed: true, ..Default::default() };
    let ci = invert_pl_ci(&pwid_means(), &spec, &cfg).unwrap();
    let lo = ci.interval_lo.unwrap();
    let hi = ci.interval_hi.unwrap();
    assert!((lo / 325.0 - 1.0).abs() < 0.02, "lo {lo}");
    assert!((hi / 538.0 - 1.0).abs() < 0.02, "hi {hi}");
}

#[test]
fn pl_pairwise_positive_five() {
    let spec = RestrictionSpec::all_pairs(3, 1.0, 5.0).unwrap();
    let cfg = PlConfig { truncate_at_observed: true, ..Default::default() };
    let ci = invert_pl_ci(&pwid_means(), &spec, &cfg).unwrap();
    let lo = ci.interval_lo.unwrap();
    let hi = ci.interval_hi.unwrap();
    assert!((lo / 454.0 - 1.0).abs() < 0.02, "lo {lo}");
    assert!((hi / 754.0 - 1.0).abs() < 0.02, "hi {hi}");
}

#[test]
fn tib_pairwise_agnostic_three_single_seed() {
    let spec = RestrictionSpec::all_pairs(3, 1.0 / 3.0, 3.0).unwrap();
    let cfg = TestConfig {
        bootstrap: 2000,
        seed: 1,
        truncate_at_observed: true,
        ..Default::default()
    };
    let ci = invert_ci(&spec, &[pwid_example()], &cfg).unwrap();
    let lo = ci.interval_lo.unwrap();
    let hi = ci.interval_hi.unwrap();
    assert!((lo / 313.0 - 1.0).abs() < 0.05, "lo {lo}");
    assert!((hi / 542.0 - 1.0).abs() < 0.05, "hi {hi}");
}

#[test]
fn tib_highest_order_upper_is_infinite() {
    let spec = RestrictionSpec::highest_order(0.4).unwrap();
    let cfg = TestConfig {
        bootstrap: 1000,
        seed: 2,
        truncate_at_observed: true,
        ..Default::default()
    };
    let ci = invert_ci(&spec, &[pwid_example()], &cfg).unwrap();
    assert!(ci.infinite_upper, "upper endpoint should be open");
    let lo = ci.interval_lo.unwrap();
    assert!(lo > 320.0 && lo < 420.0, "lo {lo}");
}
