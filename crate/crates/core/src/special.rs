//! Integer-order special functions used by the closed-form moment integrals.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecialError {
    #[error("order must be at least 1, got {0}")]
    InvalidOrder(i64),
    #[error("argument {0} is outside (0, 1)")]
    OutOfDomain(f64),
    #[error("Γ({order}, {x}) overflows f64")]
    Overflow { order: u32, x: f64 },
}

const POLYLOG_MAX_TERMS: usize = 100_000;

/// Upper incomplete gamma `Γ(s, x) = ∫ₓ^∞ t^{s-1} e^{-t} dt` for integer `s ≥ 1`.
///
/// Uses the finite sum `(s-1)! e^{-x} Σ_{k<s} x^k / k!`, valid for any real
/// `x` including negative arguments.
pub fn upper_incomplete_gamma(order: u32, x: f64) -> Result<f64, SpecialError> {
    if order == 0 {
        return Err(SpecialError::InvalidOrder(0));
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..order {
        term *= x / k as f64;
        sum += term;
    }
    let factorial: f64 = (1..order).map(f64::from).product();
    let value = factorial * (-x).exp() * sum;
    if !value.is_finite() && x.is_finite() {
        return Err(SpecialError::Overflow { order, x });
    }
    Ok(value)
}

/// Polylogarithm `Li_s(z) = Σ_{n≥1} zⁿ / nˢ` for integer `s ≥ 1` and `0 < z < 1`.
pub fn polylog(order: i64, z: f64) -> Result<f64, SpecialError> {
    if order < 1 {
        return Err(SpecialError::InvalidOrder(order));
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(SpecialError::OutOfDomain(z));
    }
    if order == 1 {
        return Ok(-(-z).ln_1p());
    }
    let s = order as i32;
    // Remaining tail after term n is bounded by term_n * z / (1 - z).
    let tail_factor = z / (1.0 - z);
    let mut zn = 1.0;
    let mut sum = 0.0;
    for n in 1..=POLYLOG_MAX_TERMS {
        zn *= z;
        let term = zn / (n as f64).powi(s);
        sum += term;
        if term * tail_factor < 1e-17 * sum {
            break;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn gamma_trivial_values() {
        assert!((upper_incomplete_gamma(1, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let e2 = 2f64.exp();
        assert!(rel(upper_incomplete_gamma(1, -2.0).unwrap(), e2) < 1e-15);
        // Γ(s, 0) = (s-1)!
        assert!(rel(upper_incomplete_gamma(6, 0.0).unwrap(), 120.0) < 1e-15);
    }

    #[test]
    fn gamma_rejects_zero_order() {
        assert_eq!(upper_incomplete_gamma(0, 1.0), Err(SpecialError::InvalidOrder(0)));
    }

    #[test]
    fn gamma_overflow_is_loud() {
        assert!(matches!(upper_incomplete_gamma(3, -800.0), Err(SpecialError::Overflow { .. })));
        assert!(upper_incomplete_gamma(3, -600.0).unwrap().is_finite());
    }

    #[test]
    fn gamma_recurrence() {
        // Γ(s+1, x) = s Γ(s, x) + x^s e^{-x}
        for s in 1..=10u32 {
            for i in 0..=40 {
                let x = -10.0 + 0.5 * i as f64;
                let lhs = upper_incomplete_gamma(s + 1, x).unwrap();
                let rhs = s as f64 * upper_incomplete_gamma(s, x).unwrap() + x.powi(s as i32) * (-x).exp();
                let scale = lhs.abs().max(x.abs().powi(s as i32) * (-x).exp());
                assert!((lhs - rhs).abs() <= 1e-10 * scale, "s={s} x={x}");
            }
        }
    }

    #[test]
    fn gamma_positive_for_nonnegative_x() {
        for s in 1..=14u32 {
            for &x in &[0.0, 0.1, 1.0, 5.0, 30.0] {
                assert!(upper_incomplete_gamma(s, x).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn polylog_closed_form_order_one() {
        assert!(rel(polylog(1, 0.5).unwrap(), 2f64.ln()) < 1e-15);
    }

    #[test]
    fn polylog_small_argument() {
        let z = 1e-8;
        assert!((polylog(2, z).unwrap() / z - 1.0).abs() < 1e-7);
    }

    #[test]
    fn polylog_matches_fixed_series() {
        let z = (-1f64).exp();
        let oracle: f64 = (1..=200).map(|n| z.powi(n) / (n as f64).powi(3)).sum();
        assert!(rel(polylog(3, z).unwrap(), oracle) < 1e-12);
    }

    #[test]
    fn polylog_domain_errors() {
        assert_eq!(polylog(0, 0.5), Err(SpecialError::InvalidOrder(0)));
        assert_eq!(polylog(2, 1.0), Err(SpecialError::OutOfDomain(1.0)));
        assert_eq!(polylog(2, 0.0), Err(SpecialError::OutOfDomain(0.0)));
        assert!(polylog(2, -0.3).is_err());
    }

    #[test]
    fn polylog_derivative_identity() {
        // z d/dz Li_s(z) = Li_{s-1}(z)
        for s in 2..=4 {
            for &z in &[0.1, 0.5, 0.9] {
                let h = 1e-6 * z;
                let d = (polylog(s, z + h).unwrap() - polylog(s, z - h).unwrap()) / (2.0 * h);
                assert!(rel(z * d, polylog(s - 1, z).unwrap()) < 1e-6, "s={s} z={z}");
            }
        }
    }

    #[test]
    fn polylog_positive() {
        for s in 1..=14 {
            for &z in &[1e-6, 0.3, 0.99] {
                assert!(polylog(s, z).unwrap() > 0.0);
            }
        }
    }
}
