mod common;

use common::*;
use kis_core::engine::init_from_scores;
use kis_core::{Hyperparams, Label, Pair};
use proptest::prelude::*;

/// Fixtures of `n` items in `f` spaces of dimension `dim`, rows drawn from a
/// small grid so proptest can shrink them.
fn fixture() -> impl Strategy<Value = Fixture> {
    (4usize..=12, 1usize..=3, 2usize..=5).prop_flat_map(|(n, f, dim)| {
        prop::collection::vec(prop::collection::vec(-8i8..=8, n * dim), f).prop_filter_map("zero row", move |raw| {
            let raw = raw.into_iter().map(|s| s.into_iter().map(|x| x as f32 / 8.0).collect()).collect();
            Fixture::from_raw(dim, raw)
        })
    })
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::First), Just(Label::Second)]
}

/// A fixture with two distinct items and a third index (possibly equal).
fn fixture_with_pair() -> impl Strategy<Value = (Fixture, usize, usize, usize)> {
    fixture().prop_flat_map(|fx| {
        let n = fx.n();
        (Just(fx), 0..n, 0..n - 1, 0..n).prop_map(|(fx, a, b, t)| {
            let b = if b >= a { b + 1 } else { b };
            (fx, a, b, t)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn probabilities_stay_normalised(fx in fixture(), seed in any::<u64>()) {
        check_normalization(&fx, seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn label_flip_is_symmetric((fx, a, b, _) in fixture_with_pair(), l in label(), c in 0.0f64..=1.0, rho in 0.01f64..1.0) {
        check_label_flip(&fx, a, b, l, c, rho).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn soft_update_reduces_to_hard(fx in fixture(), seed in any::<u64>(), rho in 0.01f64..1.0) {
        check_soft_hard(&fx, seed, rho).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn temporal_factor_is_monotone_in_the_gap((fx, a, b, _) in fixture_with_pair(), l in label(), c in 0.0f64..=1.0, rho in 0.01f64..1.0) {
        check_monotonicity(&fx, a, b, l, c, rho).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn oracle_feedback_keeps_target_term_above_half((fx, a, b, t) in fixture_with_pair(), c in 0.0f64..=1.0, rho in 0.01f64..1.0) {
        check_oracle_floor(&fx, t, Pair { a, b }, c, rho).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn swapping_a_pair_flips_choices_not_alignment((fx, a, b, t) in fixture_with_pair()) {
        check_swap_symmetry(&fx, t, Pair { a, b }).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn empty_update_is_a_no_op(fx in fixture()) {
        check_empty_update(&fx).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn distance_bins_partition_the_range(norm in 0.0f64..=2.0) {
        check_bin_partition(norm).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn bin_edges_fall_in_the_lower_bin() {
    for k in 0..=200 {
        check_bin_partition(k as f64 / 100.0).unwrap();
    }
}

#[test]
fn display_bands_hold_over_a_thousand_seeds() {
    let scores: Vec<f64> = (0..300).map(|i| ((i * 7919) % 300) as f64 / 300.0).collect();
    let state = init_from_scores(&scores, &Hyperparams { n_prune: 200, ..Hyperparams::default() }).unwrap();
    for seed in 0..1000 {
        check_display_bands(&state, 5, seed).unwrap();
    }
}

#[test]
fn seeded_sweep_passes() {
    invariant_sweep(17, 200).unwrap();
}
