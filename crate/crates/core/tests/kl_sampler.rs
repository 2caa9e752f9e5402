#[path = "common/oracles.rs"]
mod oracles;

use btv_core::btv::{kl_to_standard_normal, loss};
use proptest::prelude::*;

#[test]
fn kl_matches_closed_form_examples() {
    assert_eq!(kl_to_standard_normal(&[0.0; 7], &[0.0; 7]), 0.0);
    assert_eq!(kl_to_standard_normal(&[1.0], &[0.0]), 0.5);
}

#[test]
fn kl_matches_monte_carlo() {
    for (i, c) in oracles::kl_cases().iter().enumerate() {
        assert!(c.rel_error() < 0.02, "set {i}: {c:?}");
    }
}

#[test]
fn sampler_reproduces_mean_and_std() {
    let cases = oracles::sampler_cases();
    let first = cases[0];
    assert!((first.mean_hat - 2.0).abs() <= 0.02, "{first:?}");
    assert!((first.std_hat - 2.0).abs() <= 0.02, "{first:?}");
    for c in cases {
        let (em, es) = c.errors();
        assert!(em < 0.01 && es < 0.01, "{c:?}");
    }
}

#[test]
fn loss_examples() {
    assert_eq!(loss(&[1.0, 3.0], &[0.0], &[0.0], 0.0).unwrap(), 1.0);
    assert_eq!(loss(&[2.0, 2.0], &[1.0], &[0.0], 1e3).unwrap(), 500.0);
}

proptest! {
    #[test]
    fn kl_is_non_negative(
        params in prop::collection::vec((-5.0f64..5.0, -6.0f64..4.0), 1..20)
    ) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = params.into_iter().unzip();
        prop_assert!(kl_to_standard_normal(&mu, &lv) >= 0.0);
    }

    #[test]
    fn loss_is_std_plus_weighted_kl(
        logits in prop::collection::vec(-10.0f64..10.0, 1..12),
        mu in -3.0f64..3.0,
        lv in -4.0f64..2.0,
        alpha in 0.0f64..10.0,
    ) {
        let std = btv_core::tensor::population_std(&logits).unwrap();
        let kl = kl_to_standard_normal(&[mu], &[lv]);
        let l = loss(&logits, &[mu], &[lv], alpha).unwrap();
        prop_assert!((l - (std + alpha * kl)).abs() <= 1e-12 * (1.0 + l.abs()));
    }
}
