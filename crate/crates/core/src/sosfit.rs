//! L2-optimal monotone polynomial approximation `O_{2K+1}` of a target on an
//! interval `[a, b]`.
//!
//! Monotonicity is built into the parameterization: the derivative is
//! written as a sum of two squares `(Σ aᵢxⁱ)² + (Σ bᵢxⁱ)²` with
//! `deg B < deg A = K`, and the polynomial itself is its antiderivative plus
//! a constant `C`. The parameters `w = (C, a₀..a_K, b₀..b_{K-1})` map to the
//! monomial coefficients `α(w)` quadratically, so the L2 objective
//! `½ αᵀMα − βᵀα` is quartic in `w`. Stationary points are found with a
//! damped Newton method from many random starts and the best one is kept.
//!
//! The Newton iteration runs on the problem mapped affinely onto `[-1, 1]`,
//! with `A`, `B` and the fit expanded in orthonormal Legendre polynomials;
//! the monomial Gram matrix is far too ill-conditioned to resolve small
//! errors. Results are mapped back to monomial parameters in `x`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::poly::Polynomial;
use crate::quadrature::{gauss_legendre, integrate_adaptive};
use crate::renorm::{MapParams, RenormError, RenormalizationMap, Target};
use crate::special::{polylog, upper_incomplete_gamma, SpecialError};

/// Relative tolerance used when checking closed-form moments against
/// adaptive quadrature.
pub const MOMENT_CHECK_TOL: f64 = 1e-8;

const NORMALIZED_MOMENT_NODES: usize = 512;
const POLISH_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("interval [{a}, {b}] is empty or not finite")]
    InvalidInterval { a: f64, b: f64 },
    #[error("the Planckian is undefined on [{a}, {b}]; the interval must lie in x < 0")]
    OutsideDomain { a: f64, b: f64 },
    #[error("at least one start is required")]
    NoStarts,
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Renorm(#[from] RenormError),
    #[error("no start converged out of {starts}; best gradient norm {best_gradient_norm:e}")]
    NoConvergence { starts: usize, best_w: Option<SosParameters>, best_gradient_norm: f64 },
}

/// `w = (C, a₀..a_K, b₀..b_{K-1})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SosParameters {
    pub c: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SosParameters {
    /// Panics unless `a.len() == b.len() + 1`.
    pub fn new(c: f64, a: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(a.len(), b.len() + 1, "need len(a) = len(b) + 1");
        Self { c, a, b }
    }

    pub fn zeros(k: usize) -> Self {
        Self::new(0.0, vec![0.0; k + 1], vec![0.0; k])
    }

    pub fn k(&self) -> usize {
        self.b.len()
    }

    pub fn len(&self) -> usize {
        2 * self.k() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.c);
        v.extend(&self.a);
        v.extend(&self.b);
        DVector::from_vec(v)
    }

    /// Inverse of [`to_vector`](Self::to_vector); the length must be even.
    pub fn from_slice(w: &[f64]) -> Self {
        assert!(w.len() >= 2 && w.len().is_multiple_of(2));
        let k = w.len() / 2 - 1;
        Self::new(w[0], w[1..k + 2].to_vec(), w[k + 2..].to_vec())
    }

    pub fn a_poly(&self) -> Polynomial {
        Polynomial::new(self.a.clone())
    }

    pub fn b_poly(&self) -> Polynomial {
        Polynomial::new(self.b.clone())
    }

    /// `(Σ aᵢxⁱ)² + (Σ bᵢxⁱ)²`, the derivative the parameters certify.
    pub fn sum_of_squares(&self) -> Polynomial {
        let a = self.a_poly();
        let b = self.b_poly();
        a.mul(&a).add(&b.mul(&b))
    }
}

/// Monomial coefficients of `C + ∫₀ˣ (A² + B²)`, length `2K + 2`.
pub fn alpha_from_w(w: &SosParameters) -> Vec<f64> {
    let k = w.k();
    let mut alpha = vec![0.0; 2 * k + 2];
    alpha[0] = w.c;
    for n in 1..=2 * k + 1 {
        let lo = (n - 1).saturating_sub(k);
        let hi = k.min(n - 1);
        let mut s = 0.0;
        for i in lo..=hi {
            let j = n - 1 - i;
            s += w.a[i] * w.a[j];
            if i < k && j < k {
                s += w.b[i] * w.b[j];
            }
        }
        alpha[n] = s / n as f64;
    }
    alpha
}

/// `J = ∂α/∂w`, a `(2K+2) × (2K+2)` matrix with row 0 = `e₀` and the
/// banded blocks `2A | 2B` below, `∂α_n/∂a_i = (2/n) a_{n-1-i}`.
pub fn jacobian_alpha(w: &SosParameters) -> DMatrix<f64> {
    let k = w.k();
    let size = 2 * k + 2;
    let mut jac = DMatrix::zeros(size, size);
    jac[(0, 0)] = 1.0;
    for n in 1..=2 * k + 1 {
        let nf = n as f64;
        for i in 0..=k {
            if n > i && n - 1 - i <= k {
                jac[(n, 1 + i)] = 2.0 * w.a[n - 1 - i] / nf;
            }
        }
        for i in 0..k {
            if n > i && n - 1 - i < k {
                jac[(n, k + 2 + i)] = 2.0 * w.b[n - 1 - i] / nf;
            }
        }
    }
    jac
}

/// Gram matrix of the monomials `1..x^{size-1}` on `[a, b]`.
pub fn monomial_gram(a: f64, b: f64, size: usize) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| {
        let p = (i + j + 1) as i32;
        (b.powi(p) - a.powi(p)) / p as f64
    })
}

/// `∫_a^b x^j e^x dx = (-1)^j [Γ(j+1, -b) - Γ(j+1, -a)]`.
pub fn exp_moment(j: u32, a: f64, b: f64) -> Result<f64, SpecialError> {
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign * (upper_incomplete_gamma(j + 1, -b)? - upper_incomplete_gamma(j + 1, -a)?))
}

/// `∫_a^b x^j / (e^{-x} - 1) dx` for `a < b < 0` via polylogarithms:
/// `Σ_{k≤j} (-1)^{j+k} j!/k! [b^k Li_{j+1-k}(e^b) - a^k Li_{j+1-k}(e^a)]`.
pub fn planck_moment(j: u32, a: f64, b: f64) -> Result<f64, SpecialError> {
    let (ea, eb) = (a.exp(), b.exp());
    let mut sum = 0.0;
    // j!/k! built downward from k = j.
    let mut ratio = 1.0;
    for k in (0..=j).rev() {
        if k < j {
            ratio *= (k + 1) as f64;
        }
        let sign = if (j + k).is_multiple_of(2) { 1.0 } else { -1.0 };
        let s = (j + 1 - k) as i64;
        let term = b.powi(k as i32) * polylog(s, eb)? - a.powi(k as i32) * polylog(s, ea)?;
        sum += sign * ratio * term;
    }
    Ok(sum)
}

/// Outcome of comparing the closed-form moments to adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentValidation {
    pub max_relative_deviation: f64,
    pub passed: bool,
}

/// The optimization data for one (target, K, interval) triple in the
/// original coordinates, plus the orthonormal form the solver works in.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub target: Target,
    pub k: usize,
    pub a: f64,
    pub b: f64,
    /// `M_{ij} = (b^{i+j+1} - a^{i+j+1}) / (i+j+1)`
    pub gram: DMatrix<f64>,
    /// `β_j = ∫_a^b x^j β(x) dx`
    pub moments: DVector<f64>,
    pub validation: MomentValidation,
    normalized: NormalizedProblem,
}

/// The problem on `t ∈ [-1, 1]` with `x = center + half_width·t`, with
/// `A`, `B` and the fitted polynomial expanded in orthonormal Legendre
/// polynomials `φₙ`. There the Gram matrix is the identity and the moments
/// are `∫ φₙ β`.
#[derive(Debug, Clone)]
struct NormalizedProblem {
    center: f64,
    half_width: f64,
    /// `φₙ(t_g)` at the collocation nodes, `n = 0..=2K+1`.
    phi: DMatrix<f64>,
    /// Maps node values of `A² + B²` to the coefficients of `∫₀ᵗ (A² + B²)`.
    projector: DMatrix<f64>,
    moments: DVector<f64>,
}

/// Values of `φ₀..φ_{len-1}` at `t`.
fn orthonormal_legendre(t: f64, len: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(len.max(2));
    p.push(1.0);
    p.push(t);
    for n in 2..len {
        let nf = n as f64;
        p.push(((2.0 * nf - 1.0) * t * p[n - 1] - (nf - 1.0) * p[n - 2]) / nf);
    }
    p.truncate(len);
    p.iter().enumerate().map(|(n, v)| v * (n as f64 + 0.5).sqrt()).collect()
}

/// Monomial coefficients of `φ₀..φ_{len-1}`.
fn orthonormal_legendre_monomials(len: usize) -> Vec<Polynomial> {
    let t = Polynomial::new(vec![0.0, 1.0]);
    let mut p = vec![Polynomial::constant(1.0), t.clone()];
    for n in 2..len {
        let nf = n as f64;
        let next = t.mul(&p[n - 1]).scale((2.0 * nf - 1.0) / nf).sub(&p[n - 2].scale((nf - 1.0) / nf));
        p.push(next);
    }
    p.truncate(len);
    p.into_iter().enumerate().map(|(n, q)| q.scale((n as f64 + 0.5).sqrt())).collect()
}

impl NormalizedProblem {
    fn new(target: Target, k: usize, a: f64, b: f64) -> Self {
        let size = 2 * k + 2;
        let center = 0.5 * (a + b);
        let half_width = 0.5 * (b - a);

        // 2K+2 Gauss nodes integrate every product that appears exactly.
        let (nodes, weights) = gauss_legendre(size);
        let phi = DMatrix::from_fn(size, size, |g, n| orthonormal_legendre(nodes[g], size)[n]);

        // ∫₀ᵗ φₙ = √(n+½) [P_{n+1} − P_{n−1}]/(2n+1) shifted to vanish at 0.
        let raw = |t: f64| -> Vec<f64> {
            let p: Vec<f64> = orthonormal_legendre(t, size + 1)
                .iter()
                .enumerate()
                .map(|(n, v)| v / (n as f64 + 0.5).sqrt())
                .collect();
            (0..size - 1)
                .map(|n| {
                    let anti = if n == 0 { p[1] } else { (p[n + 1] - p[n - 1]) / (2 * n + 1) as f64 };
                    anti * (n as f64 + 0.5).sqrt()
                })
                .collect()
        };
        let at_zero = raw(0.0);
        let anti = DMatrix::from_fn(size, size - 1, |g, n| raw(nodes[g])[n] - at_zero[n]);
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&weights));
        // Coefficients of ∫₀ᵗ φₙ, then of s ↦ ∫₀ᵗ S for S sampled at the nodes.
        let integrals = phi.transpose() * &w * anti;
        let sampled = phi.columns(0, size - 1).transpose() * &w;
        let projector = integrals * sampled;

        // The integrands are analytic on [-1, 1]; this rule is exact to
        // roundoff and avoids the cancellation in the closed forms.
        let (qn, qw) = gauss_legendre(NORMALIZED_MOMENT_NODES);
        let mut moments = DVector::zeros(size);
        for (&t, &wt) in qn.iter().zip(&qw) {
            let v = wt * target.value(center + half_width * t);
            for (n, p) in orthonormal_legendre(t, size).iter().enumerate() {
                moments[n] += v * p;
            }
        }

        Self { center, half_width, phi, projector, moments }
    }

    fn k(&self) -> usize {
        self.moments.len() / 2 - 1
    }

    /// Node values of `A` and `B`. Here `w = (C, ã₀..ã_K, b̃₀..b̃_K)`: `B`
    /// carries a degree-K term so that the rotation `A + iB → e^{iθ}(A + iB)`,
    /// which leaves `A² + B²` unchanged, is an exact symmetry instead of a
    /// nearly flat valley. [`Self::fix_gauge`] removes it at the end.
    fn factors(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let k = self.k();
        let a = self.phi.columns(0, k + 1) * w.rows(1, k + 1);
        let b = self.phi.columns(0, k + 1) * w.rows(k + 2, k + 1);
        (a, b)
    }

    /// Unit tangent of the rotation orbit through `w`.
    fn rotation_direction(&self, w: &DVector<f64>) -> DVector<f64> {
        let k = self.k();
        let mut v = DVector::zeros(w.len());
        for i in 0..=k {
            v[1 + i] = -w[k + 2 + i];
            v[k + 2 + i] = w[1 + i];
        }
        let n = v.norm();
        if n > 0.0 {
            v /= n;
        }
        v
    }

    /// Rotates `A + iB` so that the degree-K coefficient of `B` vanishes.
    fn fix_gauge(&self, w: &DVector<f64>) -> DVector<f64> {
        let k = self.k();
        let (ak, bk) = (w[1 + k], w[2 * k + 2]);
        let r = ak.hypot(bk);
        if r == 0.0 {
            return w.clone();
        }
        let (cos, sin) = (ak / r, -bk / r);
        let mut out = w.clone();
        for i in 0..=k {
            let (a, b) = (w[1 + i], w[k + 2 + i]);
            out[1 + i] = cos * a - sin * b;
            out[k + 2 + i] = sin * a + cos * b;
        }
        out[2 * k + 2] = 0.0;
        out
    }

    fn coefficients(&self, w: &DVector<f64>) -> DVector<f64> {
        let (a, b) = self.factors(w);
        let s = a.component_mul(&a) + b.component_mul(&b);
        let mut c = &self.projector * s;
        c[0] += std::f64::consts::SQRT_2 * w[0];
        c
    }

    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let k = self.k();
        let (a, b) = self.factors(w);
        let mut jac = DMatrix::zeros(2 * k + 2, 2 * k + 3);
        jac[(0, 0)] = std::f64::consts::SQRT_2;
        let scaled_a = DMatrix::from_fn(2 * k + 2, k + 1, |g, i| 2.0 * a[g] * self.phi[(g, i)]);
        let scaled_b = DMatrix::from_fn(2 * k + 2, k + 1, |g, i| 2.0 * b[g] * self.phi[(g, i)]);
        jac.view_mut((0, 1), (2 * k + 2, k + 1)).copy_from(&(&self.projector * scaled_a));
        jac.view_mut((0, k + 2), (2 * k + 2, k + 1)).copy_from(&(&self.projector * scaled_b));
        jac
    }

    /// `JᵀJ + T`, with `T` the residual contracted against `∂²α/∂w²`.
    fn hessian(&self, jac: &DMatrix<f64>, residual: &DVector<f64>) -> DMatrix<f64> {
        let k = self.k();
        let mut h = jac.transpose() * jac;
        let rho = self.projector.transpose() * residual;
        for p in 0..=k {
            for q in 0..=k {
                let t: f64 = (0..2 * k + 2).map(|g| 2.0 * rho[g] * self.phi[(g, p)] * self.phi[(g, q)]).sum();
                h[(1 + p, 1 + q)] += t;
                h[(k + 2 + p, k + 2 + q)] += t;
            }
        }
        h
    }

    /// Hessian and gradient with the rotation direction made stiff and
    /// projected out, so steps never drift along the symmetry.
    fn gauged_model(
        &self,
        w: &DVector<f64>,
        jac: &DMatrix<f64>,
        residual: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let v = self.rotation_direction(w);
        let mut grad = jac.transpose() * residual;
        grad -= &v * v.dot(&grad);
        let mut h = self.hessian(jac, residual);
        let stiffness = h.amax();
        h += &v * v.transpose() * stiffness;
        (h, grad)
    }

    /// Monomial-basis parameters of the same polynomial on `[-1, 1]`.
    fn to_monomial(&self, w: &DVector<f64>) -> SosParameters {
        let k = self.k();
        let basis = orthonormal_legendre_monomials(k + 1);
        let expand = |coeffs: &[f64], len: usize| -> Vec<f64> {
            let mut acc = Polynomial::zero();
            for (c, p) in coeffs.iter().zip(&basis) {
                acc = acc.add(&p.scale(*c));
            }
            let mut out = acc.into_coeffs();
            out.resize(len, 0.0);
            out
        };
        let w = self.fix_gauge(w);
        SosParameters::new(w[0], expand(w.rows(1, k + 1).as_slice(), k + 1), expand(w.rows(k + 2, k).as_slice(), k))
    }

    fn to_original(&self, w: &DVector<f64>) -> SosParameters {
        denormalize(&self.to_monomial(w), self.center, self.half_width)
    }
}

pub fn build_fit_problem(target: Target, k: usize, a: f64, b: f64) -> Result<FitProblem, FitError> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(FitError::InvalidInterval { a, b });
    }
    if target == Target::BoseEinstein && b >= 0.0 {
        return Err(FitError::OutsideDomain { a, b });
    }
    let size = 2 * k + 2;
    let moment = |j: u32| match target {
        Target::BoltzmannShannon => exp_moment(j, a, b),
        Target::BoseEinstein => planck_moment(j, a, b),
    };
    let moments = (0..size as u32).map(moment).collect::<Result<Vec<_>, _>>()?;

    let mut worst: f64 = 0.0;
    for (j, &m) in moments.iter().enumerate() {
        let quad = integrate_adaptive(|x| x.powi(j as i32) * target.value(x), a, b, 1e-13);
        let scale = integrate_adaptive(|x| (x.powi(j as i32) * target.value(x)).abs(), a, b, 1e-10);
        worst = worst.max((m - quad).abs() / scale.max(f64::MIN_POSITIVE));
    }
    let validation = MomentValidation { max_relative_deviation: worst, passed: worst <= MOMENT_CHECK_TOL };

    Ok(FitProblem {
        target,
        k,
        a,
        b,
        gram: monomial_gram(a, b, size),
        moments: DVector::from_vec(moments),
        validation,
        normalized: NormalizedProblem::new(target, k, a, b),
    })
}

fn objective_with(gram: &DMatrix<f64>, moments: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    0.5 * alpha.dot(&(gram * alpha)) - moments.dot(alpha)
}

impl FitProblem {
    /// `½ αᵀMα − βᵀα` at `α(w)`; the constant `½∫β²` is omitted.
    pub fn objective(&self, w: &SosParameters) -> f64 {
        objective_with(&self.gram, &self.moments, &DVector::from_vec(alpha_from_w(w)))
    }

    /// Objective for an arbitrary coefficient vector of length `2K + 2`.
    pub fn objective_alpha(&self, alpha: &[f64]) -> f64 {
        objective_with(&self.gram, &self.moments, &DVector::from_column_slice(alpha))
    }

    /// `½∫_a^b β²`, the constant dropped from the objective.
    pub fn target_energy(&self) -> f64 {
        let t = self.target;
        0.5 * integrate_adaptive(|x| t.value(x).powi(2), self.a, self.b, 1e-13)
    }
}

/// `∇_w f(α(w)) = J(w)ᵀ (M α(w) − β)`.
pub fn objective_gradient(problem: &FitProblem, w: &SosParameters) -> DVector<f64> {
    let alpha = DVector::from_vec(alpha_from_w(w));
    let residual = &problem.gram * &alpha - &problem.moments;
    jacobian_alpha(w).transpose() * residual
}

/// Hessian of `f(α(w))`: `JᵀMJ + T` with `T` the contraction of `∂²α/∂w²`
/// with `r = Mα − β`. For the a-block `T_pq = 2 r_{p+q+1} / (p+q+1)`, the
/// b-block likewise, and the C row/column vanish.
pub fn objective_hessian(problem: &FitProblem, w: &SosParameters) -> DMatrix<f64> {
    let k = w.k();
    let jac = jacobian_alpha(w);
    let residual = &problem.gram * DVector::from_vec(alpha_from_w(w)) - &problem.moments;
    let mut h = jac.transpose() * &problem.gram * &jac;
    for p in 0..=k {
        for q in 0..=k {
            let n = p + q + 1;
            let t = 2.0 * residual[n] / n as f64;
            h[(1 + p, 1 + q)] += t;
            if p < k && q < k {
                h[(k + 2 + p, k + 2 + q)] += t;
            }
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { starts: 500, seed: 0, max_iter: 200, max_halvings: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub map: RenormalizationMap,
    /// Parameters in the original `x` coordinates; `map` equals `α(w)`.
    pub w: SosParameters,
    /// `f(α(w))` without the constant term.
    pub objective: f64,
    pub starts_tried: usize,
    pub converged_starts: usize,
    /// Distinct stationary points among the converged starts.
    pub distinct_stationary_points: usize,
    pub seed: u64,
}

impl FitResult {
    /// `‖O − β‖_{L2(a,b)}` by adaptive quadrature of the squared difference.
    pub fn l2_error(&self, problem: &FitProblem) -> f64 {
        l2_distance(&self.map, problem.target, problem.a, problem.b)
    }
}

/// `‖p − β‖_{L2(a,b)}` by adaptive quadrature.
pub fn l2_distance(map: &RenormalizationMap, target: Target, a: f64, b: f64) -> f64 {
    integrate_adaptive(|x| (map.eval(x) - target.value(x)).powi(2), a, b, 1e-12).max(0.0).sqrt()
}

enum StartOutcome {
    Converged { w: DVector<f64>, objective: f64, alpha: DVector<f64> },
    Failed { w: Option<DVector<f64>>, gradient_norm: f64 },
}

fn newton_from(problem: &NormalizedProblem, start: DVector<f64>, options: &FitOptions, tol: f64) -> StartOutcome {
    let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());

    let mut w = start;
    let mut alpha = problem.coefficients(&w);
    let mut residual = &alpha - &problem.moments;
    let mut f = 0.5 * residual.norm_squared();
    let mut radius = w.norm().max(1.0);
    let mut last_norm = f64::INFINITY;
    for _ in 0..options.max_iter {
        let jac = problem.jacobian(&w);
        let (hessian, grad) = problem.gauged_model(&w, &jac, &residual);
        if !finite(&grad) || !f.is_finite() {
            return StartOutcome::Failed { w: None, gradient_norm: f64::INFINITY };
        }
        last_norm = grad.norm();
        if last_norm <= tol {
            let (w, f, alpha) = polish(problem, w, f, alpha, hessian, grad);
            return StartOutcome::Converged { w, objective: f, alpha };
        }
        let mut accepted = false;
        for _ in 0..=options.max_halvings {
            let (step, predicted) = trust_region_step(&hessian, &grad, radius);
            let trial = &w + &step;
            let trial_alpha = problem.coefficients(&trial);
            let trial_residual = &trial_alpha - &problem.moments;
            let trial_f = 0.5 * trial_residual.norm_squared();
            let ratio = if predicted > 0.0 { (f - trial_f) / predicted } else { -1.0 };
            if trial_f.is_finite() && ratio > 1e-4 {
                if ratio > 0.75 && step.norm() > 0.99 * radius {
                    radius *= 2.0;
                } else if ratio < 0.25 {
                    radius = 0.25 * step.norm();
                }
                (w, alpha, residual, f) = (trial, trial_alpha, trial_residual, trial_f);
                accepted = true;
                break;
            }
            radius = 0.25 * step.norm();
            if !(radius > 0.0) {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    StartOutcome::Failed { w: Some(w), gradient_norm: last_norm }
}

/// Minimizes the quadratic model `gᵀd + ½dᵀHd` over `‖d‖ ≤ radius` through
/// the eigendecomposition of `H`. Returns the step and the predicted
/// decrease.
fn trust_region_step(h: &DMatrix<f64>, g: &DVector<f64>, radius: f64) -> (DVector<f64>, f64) {
    let eig = h.clone().symmetric_eigen();
    let lambda = &eig.eigenvalues;
    let gt = eig.eigenvectors.transpose() * g;
    let step_norm =
        |mu: f64| -> f64 { gt.iter().zip(lambda.iter()).map(|(gi, li)| (gi / (li + mu)).powi(2)).sum::<f64>().sqrt() };
    let (imin, &lmin) = lambda.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).expect("non-empty Hessian");
    let scale = lambda.amax().max(f64::MIN_POSITIVE);

    let mut coords = DVector::zeros(gt.len());
    if lmin > 1e-14 * scale && step_norm(0.0) <= radius {
        for i in 0..gt.len() {
            coords[i] = -gt[i] / lambda[i];
        }
    } else {
        let floor = (-lmin).max(0.0);
        let mut lo = floor + 1e-14 * scale;
        if step_norm(lo) <= radius {
            // Hard case: the boundary is reached along the lowest eigenvector.
            for i in 0..gt.len() {
                coords[i] = -gt[i] / (lambda[i] + lo);
            }
            let rest = radius * radius - coords.norm_squared();
            coords[imin] += rest.max(0.0).sqrt() * if gt[imin] > 0.0 { -1.0 } else { 1.0 };
        } else {
            let mut hi = floor + g.norm() / radius + scale;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if step_norm(mid) > radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            for i in 0..gt.len() {
                coords[i] = -gt[i] / (lambda[i] + hi);
            }
        }
    }
    let predicted = -(gt.dot(&coords) + 0.5 * coords.iter().zip(lambda.iter()).map(|(c, l)| l * c * c).sum::<f64>());
    (&eig.eigenvectors * coords, predicted)
}

/// A few undamped Newton steps past the stopping tolerance. Near a regular
/// minimizer each one roughly squares the gradient, so the reported fit is
/// not limited by where the tolerance happened to cut the iteration off.
fn polish(
    problem: &NormalizedProblem,
    mut w: DVector<f64>,
    mut f: f64,
    mut alpha: DVector<f64>,
    mut hessian: DMatrix<f64>,
    mut grad: DVector<f64>,
) -> (DVector<f64>, f64, DVector<f64>) {
    for _ in 0..POLISH_STEPS {
        let Some(delta) = descent_direction(hessian, &grad) else {
            break;
        };
        let trial = &w + delta;
        let trial_alpha = problem.coefficients(&trial);
        let trial_residual = &trial_alpha - &problem.moments;
        let trial_f = 0.5 * trial_residual.norm_squared();
        if !(trial_f <= f) {
            break;
        }
        let jac = problem.jacobian(&trial);
        (hessian, grad) = problem.gauged_model(&trial, &jac, &trial_residual);
        (w, f, alpha) = (trial, trial_f, trial_alpha);
    }
    (w, f, alpha)
}

/// Newton direction when the Hessian is positive definite; otherwise the
/// Hessian shifted past its most negative eigenvalue, which is still a
/// descent direction for the objective.
fn descent_direction(h: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = h.clone().cholesky() {
        let d = -chol.solve(grad);
        if d.iter().all(|x| x.is_finite()) {
            return Some(d);
        }
    }
    let eig = h.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let shift = (-min_eig).max(0.0) * 1.5 + 1e-10 * scale;
    let mut shifted = h;
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += shift;
    }
    shifted.cholesky().map(|c| -c.solve(grad))
}

fn random_start(problem: &FitProblem, seed: u64, index: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let k = problem.k;
    let t = problem.target;
    // ‖A‖² + ‖B‖² equals the rise of the fitted polynomial over [-1, 1].
    let rise = (t.value(problem.b) - t.value(problem.a)).abs();
    let scale = (3.0 * rise / (2 * k + 2) as f64).sqrt().max(1e-3);
    let mut w = DVector::zeros(2 * k + 3);
    w[0] = t.value(problem.normalized.center);
    for i in 1..w.len() {
        w[i] = scale * rng.random_range(-1.0..=1.0);
    }
    w
}

/// Maps parameters of `q(t)` on `[-1, 1]` to those of `p(x) = q((x − c)/h)`.
fn denormalize(w: &SosParameters, center: f64, half_width: f64) -> SosParameters {
    let inv_sqrt_h = 1.0 / half_width.sqrt();
    let shift = -center / half_width;
    let slope = 1.0 / half_width;
    let map_poly = |coeffs: &[f64], len: usize| -> Vec<f64> {
        let mut out = Polynomial::new(coeffs.to_vec()).compose_affine(shift, slope).scale(inv_sqrt_h).into_coeffs();
        out.resize(len, 0.0);
        out
    };
    let k = w.k();
    let q = Polynomial::new(alpha_from_w(w));
    SosParameters::new(q.eval(shift), map_poly(&w.a, k + 1), map_poly(&w.b, k))
}

/// Multistart Newton fit. Each start's randomness depends only on
/// `(seed, start index)`, so results are reproducible and independent of
/// thread scheduling.
pub fn fit(problem: &FitProblem, options: &FitOptions) -> Result<FitResult, FitError> {
    if options.starts == 0 {
        return Err(FitError::NoStarts);
    }
    let k = problem.k;
    let norm = &problem.normalized;
    let tol = 1e-10 * (1.0 + norm.moments.norm());

    let outcomes: Vec<StartOutcome> = (0..options.starts)
        .into_par_iter()
        .map(|i| newton_from(norm, random_start(problem, options.seed, i), options, tol))
        .collect();

    let mut best: Option<(f64, &DVector<f64>)> = None;
    let mut distinct: Vec<&DVector<f64>> = Vec::new();
    let mut converged = 0;
    let mut best_failed: Option<(f64, &DVector<f64>)> = None;
    for outcome in &outcomes {
        match outcome {
            StartOutcome::Converged { w, objective, alpha } => {
                converged += 1;
                if !distinct.iter().any(|d| (*d - alpha).amax() < 1e-6) {
                    distinct.push(alpha);
                }
                if best.is_none_or(|(f, _)| *objective < f) {
                    best = Some((*objective, w));
                }
            }
            StartOutcome::Failed { w: Some(w), gradient_norm } => {
                if best_failed.is_none_or(|(g, _)| *gradient_norm < g) {
                    best_failed = Some((*gradient_norm, w));
                }
            }
            StartOutcome::Failed { w: None, .. } => {}
        }
    }

    let Some((shifted, w_t)) = best else {
        return Err(FitError::NoConvergence {
            starts: options.starts,
            best_w: best_failed.map(|(_, w)| norm.to_original(w)),
            best_gradient_norm: best_failed.map_or(f64::INFINITY, |(g, _)| g),
        });
    };

    let w = norm.to_original(w_t);
    let objective = norm.half_width * (shifted - 0.5 * norm.moments.norm_squared());
    let map = RenormalizationMap::new(
        Polynomial::new(alpha_from_w(&w)),
        problem.target,
        MapParams::Optimized { k: k as u32, a: problem.a, b: problem.b, objective },
    )?;
    Ok(FitResult {
        map,
        w,
        objective,
        starts_tried: options.starts,
        converged_starts: converged,
        distinct_stationary_points: distinct.len(),
        seed: options.seed,
    })
}
