mod common;

use casrnn_core::cascade::Variant;
use common::*;

fn assert_all(name: &str, case: impl Fn(u64) -> f64) {
    for seed in 0..INSTANCES {
        let err = case(seed);
        assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn gru_step_matches_finite_differences() {
    assert_all("gru step", gru_step_case);
}

#[test]
fn gru_bptt_matches_finite_differences() {
    assert_all("gru sequence", gru_sequence_case);
}

#[test]
fn head_matches_finite_differences() {
    assert_all("head", head_case);
}

#[test]
fn cross_entropy_matches_finite_differences() {
    assert_all("cross-entropy", cross_entropy_case);
}

#[test]
fn conv_matches_finite_differences() {
    assert_all("conv", conv_case);
}

#[test]
fn pool_matches_finite_differences() {
    assert_all("pool", pool_case);
}

#[test]
fn cascade_variants_match_finite_differences() {
    for variant in Variant::ALL {
        assert_all(variant.name(), |s| cascade_case(s, variant));
    }
}

#[test]
fn spectral_spatial_model_matches_finite_differences() {
    assert_all("sscas", spatial_case);
}

#[test]
fn relative_error_floor() {
    assert_eq!(rel_err(0.0, 0.0), 0.0);
    assert!((rel_err(1e-9, 0.0) - 1e-4).abs() < 1e-15);
    assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
}
