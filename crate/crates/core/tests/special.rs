mod common;

use common::{rel, simpson};
use phiclosure::sosfit::{exp_moment, planck_moment};
use phiclosure::special::{polylog, upper_incomplete_gamma, SpecialError};
use proptest::prelude::*;

#[test]
fn gamma_matches_quadrature() {
    let oracle = simpson(&|t: f64| t.powi(3) * (-t).exp(), 1.5, 80.0, 1e-15);
    assert!(rel(upper_incomplete_gamma(4, 1.5).unwrap(), oracle) < 1e-10);
}

#[test]
fn gamma_overflow_is_an_error() {
    assert!(matches!(upper_incomplete_gamma(1, -710.0), Err(SpecialError::Overflow { .. })));
}

#[test]
fn polylog_series_oracle() {
    let z = (-1f64).exp();
    let oracle: f64 = (1..=200).map(|n| z.powi(n) / f64::from(n).powi(3)).sum();
    assert!(rel(polylog(3, z).unwrap(), oracle) < 1e-12);
}

#[test]
fn polylog_close_to_one() {
    // Li_2(1) = π²/6 and the deficit at 1 − ε is about ε(1 − ln ε).
    let eps: f64 = 1e-4;
    let want = std::f64::consts::PI.powi(2) / 6.0 - eps * (1.0 - eps.ln());
    assert!((polylog(2, 1.0 - eps).unwrap() - want).abs() < 1e-6);
}

#[test]
fn exponential_moments_match_quadrature() {
    for j in 0..=13 {
        let f = |x: f64| x.powi(j as i32) * x.exp();
        let scale = simpson(&|x: f64| f(x).abs(), -5.0, 5.0, 1e-10);
        let oracle = simpson(&f, -5.0, 5.0, 1e-13 * scale);
        let got = exp_moment(j, -5.0, 5.0).unwrap();
        assert!(rel(got, oracle) < 1e-8, "j={j}: {got} vs {oracle}");
    }
}

#[test]
fn planck_moments_match_quadrature() {
    let (a, b) = (-6.0, -1.0 / 6.0);
    for j in 0..=13 {
        let f = |x: f64| x.powi(j as i32) / (-x).exp_m1();
        let oracle = simpson(&f, a, b, 1e-13 * simpson(&|x: f64| f(x).abs(), a, b, 1e-8));
        let got = planck_moment(j, a, b).unwrap();
        assert!(rel(got, oracle) < 1e-8, "j={j}: {got} vs {oracle}");
    }
}

proptest! {
    #[test]
    fn gamma_recurrence(s in 1u32..=10, x in -10.0f64..10.0) {
        let lhs = upper_incomplete_gamma(s + 1, x).unwrap();
        let tail = x.powi(s as i32) * (-x).exp();
        let rhs = f64::from(s) * upper_incomplete_gamma(s, x).unwrap() + tail;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(tail.abs()));
    }

    #[test]
    fn gamma_positive_for_nonnegative_argument(s in 1u32..=14, x in 0.0f64..40.0) {
        prop_assert!(upper_incomplete_gamma(s, x).unwrap() > 0.0);
    }

    #[test]
    fn polylog_positive_and_increasing(s in 1i64..=14, z in 1e-6f64..0.99) {
        let v = polylog(s, z).unwrap();
        prop_assert!(v > 0.0);
        prop_assert!(polylog(s, z * 1.001).unwrap() > v);
        // Li_s(z) ≥ z with equality only in the limit s → ∞.
        prop_assert!(v >= z);
    }
}
