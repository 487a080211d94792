//! Moment closure on the sphere: moments, flux and collision moments of the
//! ansatz `β(λᵀm(Ω))`, and the inversion `λ ↦ U` by Newton's method.
//!
//! All integrals use a quadrature rule whose exactness covers the
//! polynomial integrands, so they are exact up to roundoff. See
//! [`required_exactness`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::renorm::{RenormalizationMap, GLOBAL_WINDOW};
use crate::sphere::{QuadratureRule, SphericalBasis};

/// Harmonic coefficients of a moment vector `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub values: DVector<f64>,
}

/// Entropic variables `λ`, the coefficients inside `β(λᵀm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropicVariables {
    pub values: DVector<f64>,
}

fn serialize_vector<S: Serializer>(name: &'static str, v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut st = s.serialize_struct(name, 1)?;
    st.serialize_field("values", v.as_slice())?;
    st.end()
}

impl Serialize for MomentVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_vector("MomentVector", &self.values, s)
    }
}

impl Serialize for EntropicVariables {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_vector("EntropicVariables", &self.values, s)
    }
}

impl MomentVector {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }
}

impl EntropicVariables {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(DVector::zeros(len))
    }

    /// `λ` with only the isotropic component, chosen so that `λᵀm ≡ s`.
    pub fn isotropic(len: usize, s: f64) -> Self {
        let mut v = DVector::zeros(len);
        v[0] = (4.0 * PI).sqrt() * s;
        Self::new(v)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClosureError {
    #[error("vector has length {got}, basis needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("target moments are not finite")]
    NonFinite,
    #[error(
        "isotropic moment gives mean {mean}, outside the map's range [{lo}, {hi}] on [-{window}, {window}]",
        window = GLOBAL_WINDOW
    )]
    OutOfRange { mean: f64, lo: f64, hi: f64 },
}

/// Degree of exactness that integrates `m mᵀ β′(λᵀm)`, `m β(λᵀm)` and the
/// flux integrand `Ω m β(λᵀm)` exactly, plus a margin of one.
pub fn required_exactness(degree: usize, map: &RenormalizationMap) -> usize {
    degree * (map.degree() + 1) + 2
}

/// The map, basis and quadrature of one closure, with `m(Ω_q)` tabulated.
#[derive(Debug, Clone)]
pub struct MomentModel<'a> {
    map: &'a RenormalizationMap,
    basis: SphericalBasis,
    rule: &'a QuadratureRule,
    table: DMatrix<f64>,
}

impl<'a> MomentModel<'a> {
    pub fn new(map: &'a RenormalizationMap, basis: SphericalBasis, rule: &'a QuadratureRule) -> Self {
        let table = rule.basis_table(&basis);
        Self { map, basis, rule, table }
    }

    pub fn basis(&self) -> SphericalBasis {
        self.basis
    }

    pub fn map(&self) -> &RenormalizationMap {
        self.map
    }

    pub fn rule(&self) -> &QuadratureRule {
        self.rule
    }

    fn check(&self, v: &DVector<f64>) -> Result<(), ClosureError> {
        if v.len() != self.basis.size() {
            return Err(ClosureError::LengthMismatch { expected: self.basis.size(), got: v.len() });
        }
        Ok(())
    }

    /// `λᵀm(Ω_q)` at every node.
    fn arguments(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.table * lambda
    }

    fn weighted<F: Fn(f64) -> f64>(&self, args: &DVector<f64>, f: F) -> DVector<f64> {
        DVector::from_iterator(args.len(), args.iter().zip(self.rule.weights()).map(|(&x, &w)| w * f(x)))
    }

    /// `U = ∫ m β(λᵀm) dΩ`
    pub fn moments(&self, lambda: &EntropicVariables) -> Result<MomentVector, ClosureError> {
        self.check(&lambda.values)?;
        let args = self.arguments(&lambda.values);
        let wb = self.weighted(&args, |x| self.map.eval(x));
        Ok(MomentVector::new(self.table.transpose() * wb))
    }

    /// `∂U/∂λ = ∫ m mᵀ β′(λᵀm) dΩ`, symmetric positive semidefinite.
    pub fn jacobian(&self, lambda: &EntropicVariables) -> Result<DMatrix<f64>, ClosureError> {
        self.check(&lambda.values)?;
        let args = self.arguments(&lambda.values);
        let wd = self.weighted(&args, |x| self.map.eval_derivative(x));
        let scaled = DMatrix::from_fn(self.table.nrows(), self.table.ncols(), |q, j| wd[q] * self.table[(q, j)]);
        let j = self.table.transpose() * scaled;
        // Symmetrize away summation-order roundoff.
        Ok((&j + j.transpose()) * 0.5)
    }

    /// Flux moments `F_d = ∫ Ω_d m β dΩ` for `d = x, y, z`, and collision
    /// moments `LU = σ ∫ m ((1/4π)∫β − β) dΩ`.
    pub fn flux_and_collision(
        &self,
        lambda: &EntropicVariables,
        sigma: f64,
    ) -> Result<([MomentVector; 3], MomentVector), ClosureError> {
        self.check(&lambda.values)?;
        let args = self.arguments(&lambda.values);
        let values: Vec<f64> = args.iter().map(|&x| self.map.eval(x)).collect();
        let nodes = self.rule.nodes();
        let w = self.rule.weights();
        let flux = [0, 1, 2].map(|d| {
            let wf = DVector::from_fn(values.len(), |q, _| w[q] * nodes[q][d] * values[q]);
            MomentVector::new(self.table.transpose() * wf)
        });
        let mean = values.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / (4.0 * PI);
        let wl = DVector::from_fn(values.len(), |q, _| sigma * w[q] * (mean - values[q]));
        Ok((flux, MomentVector::new(self.table.transpose() * wl)))
    }

    /// Solves `moments(λ) = U` by damped Newton.
    pub fn invert(&self, target: &MomentVector, options: &InvertOptions) -> Result<InversionReport, ClosureError> {
        invert_with(self, target, options)
    }
}

/// `U = ∫ m β(λᵀm) dΩ`
pub fn moments_of(
    map: &RenormalizationMap,
    lambda: &EntropicVariables,
    basis: SphericalBasis,
    rule: &QuadratureRule,
) -> Result<MomentVector, ClosureError> {
    MomentModel::new(map, basis, rule).moments(lambda)
}

/// See [`MomentModel::flux_and_collision`].
pub fn flux_and_collision_moments(
    map: &RenormalizationMap,
    lambda: &EntropicVariables,
    basis: SphericalBasis,
    rule: &QuadratureRule,
    sigma: f64,
) -> Result<([MomentVector; 3], MomentVector), ClosureError> {
    MomentModel::new(map, basis, rule).flux_and_collision(lambda, sigma)
}

/// Moments of the Dirac beam `δ(Ω − Ω₀)`, i.e. `m(Ω₀)`.
pub fn dirac_moments(basis: &SphericalBasis, direction: &Vector3<f64>) -> MomentVector {
    MomentVector::new(basis.eval(&direction.normalize()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub lambda0: Option<EntropicVariables>,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100, max_halvings: 40, lambda0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionStatus {
    Converged,
    MaxIterations,
    /// No step length reduced the residual.
    LineSearchFailed,
    /// The Jacobian stayed singular after the Tikhonov shift.
    SingularJacobian,
    NonFinite,
}

#[derive(Debug, Clone, Serialize)]
pub struct InversionReport {
    pub lambda: EntropicVariables,
    pub iterations: usize,
    pub residual_norm: f64,
    /// Convergence threshold `tol·(1 + ‖U‖)` used by the solve.
    pub tolerance: f64,
    pub jacobian_min_eigenvalue_estimate: f64,
    pub converged: bool,
    pub status: InversionStatus,
}

/// See [`MomentModel::invert`].
pub fn invert(
    map: &RenormalizationMap,
    target: &MomentVector,
    basis: SphericalBasis,
    rule: &QuadratureRule,
    options: &InvertOptions,
) -> Result<InversionReport, ClosureError> {
    MomentModel::new(map, basis, rule).invert(target, options)
}

/// Solves `β(s) = mean` by bisection on the certified window.
fn isotropic_argument(map: &RenormalizationMap, mean: f64) -> Result<f64, ClosureError> {
    let (mut lo, mut hi) = (-GLOBAL_WINDOW, GLOBAL_WINDOW);
    let (flo, fhi) = (map.eval(lo), map.eval(hi));
    if !(mean >= flo && mean <= fhi) {
        return Err(ClosureError::OutOfRange { mean, lo: flo, hi: fhi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if map.eval(mid) < mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn min_eigenvalue(j: &DMatrix<f64>) -> f64 {
    j.clone().symmetric_eigenvalues().min()
}

fn newton_step(j: &DMatrix<f64>, residual: &DVector<f64>) -> Option<DVector<f64>> {
    let finite = |d: &DVector<f64>| d.iter().all(|x| x.is_finite());
    if let Some(chol) = j.clone().cholesky() {
        let d = -chol.solve(residual);
        if finite(&d) {
            return Some(d);
        }
    }
    let mut shifted = j.clone();
    let shift = 1e-12 * j.trace();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += shift;
    }
    let d = -shifted.cholesky()?.solve(residual);
    finite(&d).then_some(d)
}

fn invert_with(
    model: &MomentModel<'_>,
    target: &MomentVector,
    options: &InvertOptions,
) -> Result<InversionReport, ClosureError> {
    let u = &target.values;
    model.check(u)?;
    if !u.iter().all(|x| x.is_finite()) {
        return Err(ClosureError::NonFinite);
    }
    let n = u.len();
    let lambda0 = match &options.lambda0 {
        Some(l) => {
            model.check(&l.values)?;
            l.clone()
        }
        None => {
            let s = isotropic_argument(model.map, u[0] / (4.0 * PI).sqrt())?;
            EntropicVariables::isotropic(n, s)
        }
    };
    let tolerance = options.tol * (1.0 + u.norm());
    let residual_of = |l: &EntropicVariables| -> DVector<f64> { model.moments(l).expect("length checked").values - u };

    let mut lambda = lambda0;
    let mut residual = residual_of(&lambda);
    let mut norm = residual.norm();
    let mut iterations = 0;
    let mut status = InversionStatus::MaxIterations;
    loop {
        if !norm.is_finite() {
            status = InversionStatus::NonFinite;
            break;
        }
        if norm <= tolerance {
            status = InversionStatus::Converged;
            break;
        }
        if iterations == options.max_iter {
            break;
        }
        iterations += 1;
        let j = model.jacobian(&lambda).expect("length checked");
        let Some(step) = newton_step(&j, &residual) else {
            status = InversionStatus::SingularJacobian;
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=options.max_halvings {
            let trial = EntropicVariables::new(&lambda.values + &step * t);
            let r = residual_of(&trial);
            let rn = r.norm();
            if rn.is_finite() && rn < norm {
                (lambda, residual, norm) = (trial, r, rn);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            status = InversionStatus::LineSearchFailed;
            break;
        }
    }
    let j = model.jacobian(&lambda).expect("length checked");
    Ok(InversionReport {
        lambda,
        iterations,
        residual_norm: norm,
        tolerance,
        jacobian_min_eigenvalue_estimate: min_eigenvalue(&j),
        converged: status == InversionStatus::Converged,
        status,
    })
}

/// The reconstructed intensity `Ω ↦ β(λᵀm(Ω))`.
#[derive(Debug, Clone)]
pub struct Reconstruction<'a> {
    map: &'a RenormalizationMap,
    lambda: DVector<f64>,
    basis: SphericalBasis,
}

pub fn reconstruct<'a>(
    map: &'a RenormalizationMap,
    lambda: &EntropicVariables,
    basis: SphericalBasis,
) -> Reconstruction<'a> {
    Reconstruction { map, lambda: lambda.values.clone(), basis }
}

impl Reconstruction<'_> {
    pub fn eval(&self, omega: &Vector3<f64>) -> f64 {
        self.map.eval(self.basis.eval(omega).dot(&self.lambda))
    }

    /// `‖I − β(λᵀm)‖_{L2(S²)}` by the given rule.
    pub fn l2_error<F: Fn(&Vector3<f64>) -> f64>(&self, exact: F, rule: &QuadratureRule) -> f64 {
        rule.integrate(|v| (exact(v) - self.eval(v)).powi(2)).max(0.0).sqrt()
    }

    /// Samples on the `n_theta × n_phi` lat-long grid at cell centers.
    pub fn sample_lat_long(&self, n_theta: usize, n_phi: usize) -> LatLongGrid {
        let mut samples = Vec::with_capacity(n_theta * n_phi);
        for i in 0..n_theta {
            let theta = PI * (i as f64 + 0.5) / n_theta as f64;
            for j in 0..n_phi {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                let v = direction(theta, phi);
                samples.push(GridSample { theta, phi, value: self.eval(&v) });
            }
        }
        LatLongGrid { n_theta, n_phi, samples }
    }
}

/// Unit vector at polar angle `theta` from `+z` and azimuth `phi`.
pub fn direction(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSample {
    /// Polar angle in radians.
    pub theta: f64,
    /// Azimuth in radians.
    pub phi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatLongGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Row-major in `theta`.
    pub samples: Vec<GridSample>,
}

impl LatLongGrid {
    pub fn max(&self) -> GridSample {
        *self.samples.iter().max_by(|a, b| a.value.total_cmp(&b.value)).expect("grid is never empty")
    }

    pub fn min(&self) -> GridSample {
        *self.samples.iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("grid is never empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renorm::build_beta_k;
    use crate::sphere::{build_basis, build_quadrature};

    #[test]
    fn isotropic_moments() {
        let map = build_beta_k(3).unwrap();
        let basis = build_basis(2);
        let rule = build_quadrature(required_exactness(2, &map));
        let lambda = EntropicVariables::isotropic(basis.size(), 0.7);
        let u = moments_of(&map, &lambda, basis, &rule).unwrap();
        assert!((u.values[0] - (4.0 * PI).sqrt() * map.eval(0.7)).abs() < 1e-12);
        assert!(u.values.rows(1, basis.size() - 1).amax() < 1e-13);
    }

    #[test]
    fn linear_map_moments_are_affine() {
        let map = build_beta_k(1).unwrap();
        let basis = build_basis(2);
        let rule = build_quadrature(required_exactness(2, &map));
        let lambda = EntropicVariables::new(DVector::from_fn(9, |i, _| 0.1 * i as f64 - 0.3));
        let u = moments_of(&map, &lambda, basis, &rule).unwrap();
        let mut want = lambda.values.clone();
        want[0] += (4.0 * PI).sqrt();
        assert!((u.values - want).amax() < 1e-13);
    }

    #[test]
    fn length_is_checked() {
        let map = build_beta_k(1).unwrap();
        let rule = build_quadrature(4);
        let err = moments_of(&map, &EntropicVariables::zeros(3), build_basis(1), &rule).unwrap_err();
        assert_eq!(err, ClosureError::LengthMismatch { expected: 4, got: 3 });
    }

    #[test]
    fn out_of_range_is_reported_before_iterating() {
        let map = build_beta_k(1).unwrap();
        let basis = build_basis(1);
        let rule = build_quadrature(required_exactness(1, &map));
        let mut u = DVector::zeros(4);
        u[0] = 1000.0;
        let err = invert(&map, &MomentVector::new(u), basis, &rule, &InvertOptions::default()).unwrap_err();
        assert!(matches!(err, ClosureError::OutOfRange { .. }));
    }

    #[test]
    fn grid_layout() {
        let map = build_beta_k(1).unwrap();
        let basis = build_basis(0);
        let grid = reconstruct(&map, &EntropicVariables::zeros(1), basis).sample_lat_long(3, 4);
        assert_eq!(grid.samples.len(), 12);
        assert!((grid.samples[0].theta - PI / 6.0).abs() < 1e-15);
        assert!((grid.samples[1].phi - 3.0 * PI / 4.0).abs() < 1e-15);
        assert!(grid.samples.iter().all(|s| (s.value - 1.0).abs() < 1e-15));
    }
}
