//! Renormalization maps: the target functions (exponential and Planckian),
//! the φ-divergence family `β_K(x) = (1 + x/K)^K`, and Taylor maps of odd
//! degree around an expansion point.
//!
//! Every map carries its exact derivative polynomial and is checked for
//! monotonicity on a sampling grid when it is built.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Polynomial;

/// Points of the uniform monotonicity grid on each certified interval.
pub const CERTIFICATION_POINTS: usize = 2001;
/// Half-width of the real-line window sampled for globally monotone maps.
pub const GLOBAL_WINDOW: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenormError {
    #[error("β_K requires an odd positive K, got {0}")]
    InvalidOrder(u32),
    #[error("η_K is defined for positive intensities only, got {0}")]
    NonPositiveIntensity(f64),
    #[error("the Planckian target requires a negative expansion point, got {0}")]
    OutsideDomain(f64),
    #[error("map derivative is {value:e} < 0 at x = {x}")]
    NotMonotone { x: f64, value: f64 },
}

/// The function a renormalization map approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `exp(x)`, dual of `I log I`.
    BoltzmannShannon,
    /// `1 / (e^{-x} - 1)` on `x < 0`, dual of the Bose–Einstein entropy.
    BoseEinstein,
}

impl Target {
    /// Function value; NaN outside the domain.
    pub fn value(self, x: f64) -> f64 {
        match self {
            Target::BoltzmannShannon => x.exp(),
            Target::BoseEinstein => {
                if x < 0.0 {
                    1.0 / (-x).exp_m1()
                } else {
                    f64::NAN
                }
            }
        }
    }

    /// `n`-th derivative; NaN outside the domain.
    pub fn derivative(self, n: usize, x: f64) -> f64 {
        match self {
            Target::BoltzmannShannon => x.exp(),
            Target::BoseEinstein => be_derivative_poly(n).eval(self.value(x)),
        }
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            Target::BoltzmannShannon => x.is_finite(),
            Target::BoseEinstein => x < 0.0,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Target::BoltzmannShannon => "BS",
            Target::BoseEinstein => "BE",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PhiDivergence,
    Taylor,
    Optimized,
}

/// Construction parameters, one variant per family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapParams {
    PhiDivergence {
        k: u32,
    },
    /// Degree is `2k + 1`.
    Taylor {
        k: u32,
        x0: f64,
    },
    /// Degree is `2k + 1`; `objective` excludes the constant `½∫β²`.
    Optimized {
        k: u32,
        a: f64,
        b: f64,
        objective: f64,
    },
}

/// A monotone polynomial `p` with its exact derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormalizationMap {
    p: Polynomial,
    dp: Polynomial,
    target: Target,
    params: MapParams,
}

/// JSON shape of a map: `{family, target, params, coeffs}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapRecord {
    pub family: Family,
    pub target: Target,
    pub params: MapParams,
    pub coeffs: Vec<f64>,
}

impl RenormalizationMap {
    /// Wraps a polynomial and certifies it. Used by every constructor,
    /// including the optimized fits.
    pub fn new(p: Polynomial, target: Target, params: MapParams) -> Result<Self, RenormError> {
        let dp = p.derivative();
        let map = Self { p, dp, target, params };
        map.certify()?;
        Ok(map)
    }

    pub fn polynomial(&self) -> &Polynomial {
        &self.p
    }

    pub fn derivative_polynomial(&self) -> &Polynomial {
        &self.dp
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn family(&self) -> Family {
        match self.params {
            MapParams::PhiDivergence { .. } => Family::PhiDivergence,
            MapParams::Taylor { .. } => Family::Taylor,
            MapParams::Optimized { .. } => Family::Optimized,
        }
    }

    pub fn degree(&self) -> usize {
        self.p.degree()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.p.eval(x)
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.dp.eval(x)
    }

    /// Interval on which the map is meant to approximate its target.
    pub fn validity_interval(&self) -> (f64, f64) {
        match self.params {
            MapParams::PhiDivergence { k } => (-(k as f64), k as f64),
            MapParams::Taylor { x0, .. } => match self.target {
                Target::BoltzmannShannon => (x0 - 5.0, x0 + 5.0),
                // Convergence disc of the Planckian series is |x - x0| < |x0|.
                Target::BoseEinstein => (2.0 * x0, 0.0),
            },
            MapParams::Optimized { a, b, .. } => (a, b),
        }
    }

    /// Checks `p' ≥ 0` on the uniform validity-interval grid and on the
    /// global window `[-50, 50]`. The tolerance is `1e-12` scaled by the
    /// magnitude of the terms summed at each point.
    pub fn certify(&self) -> Result<(), RenormError> {
        let (lo, hi) = self.validity_interval();
        for (a, b) in [(lo, hi), (-GLOBAL_WINDOW, GLOBAL_WINDOW)] {
            for i in 0..CERTIFICATION_POINTS {
                let x = a + (b - a) * i as f64 / (CERTIFICATION_POINTS - 1) as f64;
                let value = self.dp.eval(x);
                let scale: f64 =
                    self.dp.coeffs().iter().enumerate().map(|(k, c)| c.abs() * x.abs().powi(k as i32)).sum();
                if !(value >= -1e-12 * scale.max(1.0)) {
                    return Err(RenormError::NotMonotone { x, value });
                }
            }
        }
        Ok(())
    }

    /// Label of the map alone, e.g. `beta_5`, `T_5(x0=-5)`, `O_5[-10,0]`.
    pub fn label(&self) -> String {
        let d = self.degree();
        match self.params {
            MapParams::PhiDivergence { .. } => format!("beta_{d}"),
            MapParams::Taylor { x0, .. } => format!("T_{d}(x0={x0})"),
            MapParams::Optimized { a, b, .. } => format!("O_{d}[{a},{b}]"),
        }
    }

    /// Model label for a moment model of order `n` built on this map,
    /// e.g. `beta_1_5`, `T_3_5(x0=-5)`, `O_9_5[-10,0]`.
    pub fn model_label(&self, n: usize) -> String {
        let d = self.degree();
        match self.params {
            MapParams::PhiDivergence { .. } => format!("beta_{n}_{d}"),
            MapParams::Taylor { x0, .. } => format!("T_{n}_{d}(x0={x0})"),
            MapParams::Optimized { a, b, .. } => format!("O_{n}_{d}[{a},{b}]"),
        }
    }

    pub fn to_record(&self) -> MapRecord {
        MapRecord {
            family: self.family(),
            target: self.target,
            params: self.params.clone(),
            coeffs: self.p.coeffs().to_vec(),
        }
    }

    pub fn from_record(record: MapRecord) -> Result<Self, RenormError> {
        Self::new(Polynomial::new(record.coeffs), record.target, record.params)
    }
}

/// `β_K(x) = (1 + x/K)^K` for odd `K ≥ 1`, targeting the exponential.
pub fn build_beta_k(k: u32) -> Result<RenormalizationMap, RenormError> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(RenormError::InvalidOrder(k));
    }
    let kf = k as f64;
    let mut coeffs = Vec::with_capacity(k as usize + 1);
    let mut binom = 1.0;
    for j in 0..=k {
        if j > 0 {
            binom *= (k - j + 1) as f64 / j as f64;
        }
        coeffs.push(binom / kf.powi(j as i32));
    }
    RenormalizationMap::new(Polynomial::new(coeffs), Target::BoltzmannShannon, MapParams::PhiDivergence { k })
}

/// Entropy dual to `β_K`: `η_K(I) = K I (K/(K+1) I^{1/K} - 1)`.
pub fn eta_k(k: u32, intensity: f64) -> Result<f64, RenormError> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(RenormError::InvalidOrder(k));
    }
    if !(intensity > 0.0) {
        return Err(RenormError::NonPositiveIntensity(intensity));
    }
    let kf = k as f64;
    Ok(kf * intensity * (kf / (kf + 1.0) * intensity.powf(1.0 / kf) - 1.0))
}

/// `η_K'(I) = K (I^{1/K} - 1)`, the inverse of `β_K` on `x > -K`.
pub fn eta_k_derivative(k: u32, intensity: f64) -> Result<f64, RenormError> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(RenormError::InvalidOrder(k));
    }
    if !(intensity > 0.0) {
        return Err(RenormError::NonPositiveIntensity(intensity));
    }
    let kf = k as f64;
    Ok(kf * (intensity.powf(1.0 / kf) - 1.0))
}

/// Polynomial `P_n(u)` with `β_BE^{(n)}(x) = P_n(β_BE(x))`, built from
/// `P_0 = u` and `P_{n+1} = P_n'(u) u (1 + u)`.
pub fn be_derivative_poly(n: usize) -> Polynomial {
    let u_one_plus_u = Polynomial::new(vec![0.0, 1.0, 1.0]);
    let mut p = Polynomial::new(vec![0.0, 1.0]);
    for _ in 0..n {
        p = p.derivative().mul(&u_one_plus_u);
    }
    p
}

/// Taylor map `T_{2K+1}` of the target around `x0`, re-expanded in the
/// monomial basis.
pub fn build_taylor(target: Target, k: u32, x0: f64) -> Result<RenormalizationMap, RenormError> {
    if !target.contains(x0) {
        return Err(RenormError::OutsideDomain(x0));
    }
    let degree = 2 * k as usize + 1;
    let mut shifted = Vec::with_capacity(degree + 1);
    let mut factorial = 1.0;
    for n in 0..=degree {
        if n > 0 {
            factorial *= n as f64;
        }
        shifted.push(target.derivative(n, x0) / factorial);
    }
    RenormalizationMap::new(Polynomial::from_shifted(&shifted, x0), target, MapParams::Taylor { k, x0 })
}
