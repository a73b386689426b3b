//! Values frozen from an independent 40-digit evaluation of the closed forms.

use approx::assert_relative_eq;
use num_bigint::BigInt;
use subspace_uq::bias::{bias, sigma_normalizer, BiasOrder};
use subspace_uq::model::geometric_profile;
use subspace_uq::moments::{mp_trace_moment, wishart_frobenius_moment};
use subspace_uq::Dims;

#[test]
fn wishart_frobenius_reference() {
    let lambda = [3.0, 2.0, 1.0];
    for ((j1, j2), want) in [
        ((1, 1), 2_833.487_654_320_987_7),
        ((1, 2), 2_666.490_912_208_504_8),
        ((2, 2), 2_618.114_259_449_779),
    ] {
        assert_relative_eq!(
            wishart_frobenius_moment(&lambda, 50, j1, j2).unwrap(),
            want,
            max_relative = 1e-14
        );
    }
}

#[test]
fn planar_trace_moments() {
    for (t, want) in [(2, 2550u64), (3, 257_550), (4, 32_515_050), (5, 4_597_525_050)] {
        assert_eq!(mp_trace_moment(t, 50, 50).unwrap(), BigInt::from(want));
    }
    for (t, want) in [
        (2, 55_930u64),
        (3, 38_535_770),
        (4, 29_679_310_430),
        (5, 24_759_656_118_470),
    ] {
        assert_eq!(mp_trace_moment(t, 94, 594).unwrap(), BigInt::from(want));
    }
}

#[test]
fn ladder_unbalanced_three_spikes() {
    let dims = Dims::new(60, 120, 3).unwrap();
    let lambda = [120.0, 60.0, 30.0];
    for (order, want) in [
        (BiasOrder::Finite(1), 0.5075),
        (BiasOrder::Finite(2), 0.498_020_833_333_333_3),
        (BiasOrder::Finite(3), 0.499_766_623_263_888_9),
        (BiasOrder::Finite(4), 0.499_506_545_622_649),
        (BiasOrder::Infinite, 0.499_538_262_476_545_26),
    ] {
        assert_relative_eq!(bias(dims, &lambda, order).unwrap(), want, max_relative = 1e-13);
    }
    assert_relative_eq!(
        sigma_normalizer(dims, &lambda).unwrap(),
        0.042_809_331_796_804_41,
        max_relative = 1e-13
    );
}

#[test]
fn ladder_six_spikes_wide() {
    let dims = Dims::new(100, 600, 6).unwrap();
    let lambda = geometric_profile(6, 50.0);
    for (order, want) in [
        (BiasOrder::Finite(1), 0.733_687_5),
        (BiasOrder::Finite(2), 0.648_354_171_752_929_7),
        (BiasOrder::Finite(3), 0.670_719_632_070_064_5),
        (BiasOrder::Finite(4), 0.665_354_572_405_750_8),
        (BiasOrder::Infinite, 0.666_385_044_354_379_5),
    ] {
        assert_relative_eq!(bias(dims, &lambda, order).unwrap(), want, max_relative = 1e-13);
    }
}
