//! Dense univariate polynomials with real coefficients.
//!
//! Coefficients are stored in ascending-power order, `coeffs[k]` multiplying
//! `x^k`. The degree is implicit (`len - 1`) and trailing zeros are never
//! removed behind the caller's back; use [`Polynomial::trim`] when the exact
//! degree matters.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from ascending coefficients. An empty slice gives
    /// the zero polynomial `[0]`.
    pub fn new(coeffs: Vec<f64>) -> Self {
        if coeffs.is_empty() {
            return Self::zero();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    /// `c * x^k`
    pub fn monomial(k: usize, c: f64) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = c;
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Declared degree, i.e. `len - 1`, trailing zeros included.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient of `x^k`, zero past the stored length.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Evaluates `p(x)` and `p'(x)` in one Horner pass.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &c in self.coeffs.iter().rev() {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero();
        }
        let coeffs = self.coeffs[1..].iter().enumerate().map(|(k, &c)| (k + 1) as f64 * c).collect();
        Self { coeffs }
    }

    /// Antiderivative whose value at the origin is `constant`.
    pub fn antiderivative(&self, constant: f64) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(constant);
        coeffs.extend(self.coeffs.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
        Self { coeffs }
    }

    /// Exact integral over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let anti = self.antiderivative(0.0);
        anti.eval(b) - anti.eval(a)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|k| self.coeff(k) + other.coeff(k)).collect();
        Self { coeffs }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|k| self.coeff(k) - other.coeff(k)).collect();
        Self { coeffs }
    }

    /// Full convolution of the coefficient vectors.
    pub fn mul(&self, other: &Self) -> Self {
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Self { coeffs }
    }

    /// Drops trailing coefficients that are exactly zero. The zero
    /// polynomial keeps a single coefficient.
    pub fn trim(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        Self { coeffs }
    }

    /// Returns `q(x) = p(shift + scale * x)` in the monomial basis.
    pub fn compose_affine(&self, shift: f64, scale: f64) -> Self {
        let inner = Self::new(vec![shift, scale]);
        let mut acc = Self::constant(0.0);
        for &c in self.coeffs.iter().rev() {
            acc = acc.mul(&inner).add(&Self::constant(c));
        }
        acc.coeffs.truncate(self.coeffs.len());
        acc
    }

    /// Re-expands `Σ c_k (x - x0)^k` into the monomial basis.
    pub fn from_shifted(shifted: &[f64], x0: f64) -> Self {
        Self::new(shifted.to_vec()).compose_affine(-x0, 1.0)
    }
}

impl Default for Polynomial {
    fn default() -> Self {
        Self::zero()
    }
}

impl From<Vec<f64>> for Polynomial {
    fn from(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: Self) -> Polynomial {
        Polynomial::add(self, rhs)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Self) -> Polynomial {
        Polynomial::sub(self, rhs)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Self) -> Polynomial {
        Polynomial::mul(self, rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_eval(c: &[f64], x: f64) -> f64 {
        c.iter().enumerate().map(|(k, &ck)| ck * x.powi(k as i32)).sum()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn eval_examples() {
        assert_eq!(Polynomial::new(vec![1.0, 1.0]).eval(2.0), 3.0);
        assert_eq!(Polynomial::zero().eval(123.0), 0.0);
        // (1 + x/3)^3 = 1 + x + x^2/3 + x^3/27
        let p = Polynomial::new(vec![1.0, 1.0, 1.0 / 3.0, 1.0 / 27.0]);
        assert!(p.eval(-3.0).abs() < 1e-15);
        assert!(Polynomial::new(vec![1.0, 2.0]).eval(f64::NAN).is_nan());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(Polynomial::constant(5.0).derivative().coeffs(), &[0.0]);
        assert_eq!(Polynomial::new(vec![0.0, 0.0, 1.0]).derivative().coeffs(), &[0.0, 2.0]);
        let p = Polynomial::new(vec![3.0, -1.0, 0.5, 2.0]);
        let (v, dv) = p.eval_with_derivative(1.7);
        assert!((v - p.eval(1.7)).abs() < 1e-14);
        assert!((dv - p.derivative().eval(1.7)).abs() < 1e-13);
    }

    #[test]
    fn ring_examples() {
        let x = Polynomial::new(vec![0.0, 1.0]);
        assert_eq!(x.mul(&x).coeffs(), &[0.0, 0.0, 1.0]);
        assert_eq!(Polynomial::constant(1.0).add(&Polynomial::constant(-1.0)).coeffs(), &[0.0]);
        let (a0, a1) = (1.5, -0.25);
        let p = Polynomial::new(vec![a0, a1]);
        assert_eq!(p.mul(&p).coeffs(), &[a0 * a0, 2.0 * a0 * a1, a1 * a1]);
    }

    #[test]
    fn antiderivative_examples() {
        assert_eq!(Polynomial::constant(1.0).antiderivative(0.0).coeffs(), &[0.0, 1.0]);
        assert_eq!(Polynomial::new(vec![0.0, 2.0]).antiderivative(5.0).coeffs(), &[5.0, 0.0, 1.0]);
    }

    #[test]
    fn trim_only_removes_exact_zeros() {
        let p = Polynomial::new(vec![1.0, 2.0, 1e-300, 0.0, 0.0]);
        assert_eq!(p.trim().coeffs(), &[1.0, 2.0, 1e-300]);
        assert_eq!(Polynomial::new(vec![0.0, 0.0]).trim().coeffs(), &[0.0]);
    }

    #[test]
    fn shifted_expansion() {
        // (x - 2)^2 = x^2 - 4x + 4
        let p = Polynomial::from_shifted(&[0.0, 0.0, 1.0], 2.0);
        assert_eq!(p.coeffs(), &[4.0, -4.0, 1.0]);
        let q = Polynomial::new(vec![0.3, -1.2, 0.7, 0.05]);
        let r = q.compose_affine(0.4, -2.5);
        for &x in &[-1.0, 0.0, 0.3, 2.0] {
            assert!(rel_close(r.eval(x), q.eval(0.4 - 2.5 * x), 1e-13));
        }
    }

    fn coeff_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 1..=26)
    }

    proptest! {
        #[test]
        fn derivative_antiderivative_round_trip(c in coeff_vec()) {
            let p = Polynomial::new(c);
            let back = p.derivative().antiderivative(p.eval(0.0));
            if p.degree() == 0 {
                prop_assert_eq!(back.coeff(0), p.coeff(0));
            } else {
                prop_assert_eq!(back.degree(), p.degree());
                for k in 0..=p.degree() {
                    prop_assert!(rel_close(back.coeff(k), p.coeff(k), 1e-12));
                }
            }
        }

        #[test]
        fn horner_matches_power_sum(c in coeff_vec(), x in -20.0f64..20.0) {
            let p = Polynomial::new(c.clone());
            let scale: f64 = c.iter().enumerate().map(|(k, ck)| ck.abs() * x.abs().powi(k as i32)).sum();
            let diff = (p.eval(x) - naive_eval(&c, x)).abs();
            prop_assert!(diff <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn product_matches_pointwise(a in coeff_vec(), b in coeff_vec(),
                                     xs in prop::collection::vec(-2.0f64..2.0, 50)) {
            let p = Polynomial::new(a);
            let q = Polynomial::new(b);
            let pq = p.mul(&q);
            for x in xs {
                prop_assert!(rel_close(pq.eval(x), p.eval(x) * q.eval(x), 1e-10));
            }
        }
    }
}
