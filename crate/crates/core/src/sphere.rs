//! Real spherical harmonics and quadrature on the unit sphere.
//!
//! Basis ordering is l-major with `m` ascending from `-l` to `l`, so
//! `Y_{l,m}` sits at index `l² + l + m`. The harmonics are orthonormal and
//! carry no Condon–Shortley phase:
//!
//! - `Y_{l,0}  = N̄_{l,0} P_l(z)`
//! - `Y_{l,m}  = √2 N̄_{l,m} P_l^m(z) cos(mφ)` for `m > 0`
//! - `Y_{l,-m} = √2 N̄_{l,m} P_l^m(z) sin(mφ)` for `m > 0`
//!
//! The azimuthal factors are formed as `Re`/`Im` of `(x + iy)^m`, which
//! also supplies the `sin^m θ` part of `P_l^m`, so no angles are computed.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::quadrature::gauss_legendre;

#[derive(Debug, Error)]
pub enum SphereError {
    #[error("matrix is not a rotation (orthogonality defect {orthogonality:e}, det {det})")]
    NotRotation { orthogonality: f64, det: f64 },
    #[error("moment vector has length {got}, basis needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cannot read quadrature file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("quadrature file {path}, line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("quadrature file {path} does not integrate degree {exactness} exactly (defect {defect:e})")]
    NotExact { path: String, exactness: usize, defect: f64 },
}

/// All real spherical harmonics of degree `≤ N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SphericalBasis {
    degree: usize,
}

pub fn build_basis(degree: usize) -> SphericalBasis {
    SphericalBasis { degree }
}

impl SphericalBasis {
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `(N + 1)²`
    pub fn size(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Position of `Y_{l,m}` in the moment vector.
    pub fn index(l: usize, m: i64) -> usize {
        assert!(m.unsigned_abs() as usize <= l, "|m| must not exceed l");
        (l * l + l).wrapping_add_signed(m as isize)
    }

    /// `m(Ω)` for a unit vector `Ω`.
    pub fn eval(&self, omega: &Vector3<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.size());
        self.eval_into(omega, out.as_mut_slice());
        out
    }

    /// Writes `m(Ω)` into `out`, which must have length [`size`](Self::size).
    pub fn eval_into(&self, omega: &Vector3<f64>, out: &mut [f64]) {
        assert_eq!(out.len(), self.size());
        let n = self.degree;
        let (x, y, z) = (omega.x, omega.y, omega.z);
        // Re/Im of (x + iy)^m, advanced one m at a time.
        let (mut re, mut im) = (1.0, 0.0);
        // Normalized sectoral value p̄_{m,m} with the sin^m θ factor removed.
        let mut pmm = 0.5 / PI.sqrt();
        for m in 0..=n {
            if m > 0 {
                (re, im) = (re * x - im * y, re * y + im * x);
                let mf = m as f64;
                pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
            }
            let mut prev = 0.0;
            let mut cur = pmm;
            for l in m..=n {
                if l == m + 1 {
                    prev = cur;
                    cur = z * (2.0 * m as f64 + 3.0).sqrt() * prev;
                } else if l > m + 1 {
                    let (lf, mf) = (l as f64, m as f64);
                    let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                    let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
                    let next = a * (z * cur - b * prev);
                    prev = cur;
                    cur = next;
                }
                let base = l * l + l;
                if m == 0 {
                    out[base] = cur;
                } else {
                    out[base + m] = std::f64::consts::SQRT_2 * cur * re;
                    out[base - m] = std::f64::consts::SQRT_2 * cur * im;
                }
            }
        }
    }
}

/// Where a quadrature rule came from; echoed into output metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleProvenance {
    /// Gauss–Legendre in `cos θ` times the uniform rule in azimuth.
    Product {
        polar_nodes: usize,
        azimuthal_nodes: usize,
    },
    Lebedev {
        path: String,
    },
}

impl std::fmt::Display for RuleProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Product { polar_nodes, azimuthal_nodes } => {
                write!(f, "product Gauss-Legendre {polar_nodes} x uniform {azimuthal_nodes}")
            }
            Self::Lebedev { path } => write!(f, "Lebedev file {path}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<Vector3<f64>>,
    weights: Vec<f64>,
    exactness: usize,
    provenance: RuleProvenance,
}

/// Product rule exact for every polynomial of degree `≤ exactness` in
/// `(x, y, z)` restricted to the sphere.
pub fn build_quadrature(exactness: usize) -> QuadratureRule {
    let polar = (exactness + 1).div_ceil(2);
    let azimuthal = exactness + 1;
    let (zs, zw) = gauss_legendre(polar);
    let dphi = 2.0 * PI / azimuthal as f64;
    let mut nodes = Vec::with_capacity(polar * azimuthal);
    let mut weights = Vec::with_capacity(polar * azimuthal);
    for (&z, &w) in zs.iter().zip(&zw) {
        let s = (1.0 - z * z).max(0.0).sqrt();
        for j in 0..azimuthal {
            let phi = dphi * j as f64;
            nodes.push(Vector3::new(s * phi.cos(), s * phi.sin(), z));
            weights.push(w * dphi);
        }
    }
    QuadratureRule {
        nodes,
        weights,
        exactness,
        provenance: RuleProvenance::Product { polar_nodes: polar, azimuthal_nodes: azimuthal },
    }
}

/// Reads a Lebedev rule: one node per line as `theta phi weight`, angles in
/// degrees with `theta` the azimuth and `phi` the polar angle from `+z`,
/// weights summing to 1. Blank lines and lines starting with `#` are
/// skipped. The declared `exactness` is checked by integrating every
/// harmonic up to that degree.
pub fn load_lebedev(path: &Path, exactness: usize) -> Result<QuadratureRule, SphereError> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| SphereError::Io { path: label.clone(), source })?;
    parse_lebedev(&text, exactness, &label)
}

/// Parses the text of a Lebedev file; `source` names it in diagnostics.
pub fn parse_lebedev(text: &str, exactness: usize, source: &str) -> Result<QuadratureRule, SphereError> {
    let parse_err = |line: usize, message: String| SphereError::Parse { path: source.to_string(), line, message };
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        let [theta, phi, w] = fields[..] else {
            return Err(parse_err(i + 1, format!("expected 3 numbers, found {}", fields.len())));
        };
        if !(w > 0.0) {
            return Err(parse_err(i + 1, format!("weight {w} is not positive")));
        }
        let (theta, phi) = (theta.to_radians(), phi.to_radians());
        nodes.push(Vector3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()));
        weights.push(4.0 * PI * w);
    }
    if nodes.is_empty() {
        return Err(parse_err(0, "no nodes".into()));
    }
    let total: f64 = weights.iter().sum::<f64>() / (4.0 * PI);
    if (total - 1.0).abs() > 1e-10 {
        return Err(parse_err(0, format!("weights sum to {total}, expected 1")));
    }
    let rule =
        QuadratureRule { nodes, weights, exactness, provenance: RuleProvenance::Lebedev { path: source.to_string() } };
    let defect = rule.exactness_defect();
    if defect > 1e-12 {
        return Err(SphereError::NotExact { path: source.to_string(), exactness, defect });
    }
    Ok(rule)
}

/// Picks the smallest listed Lebedev rule whose exactness reaches `d`,
/// otherwise builds the product rule.
pub fn select_quadrature(d: usize, lebedev: &[(usize, &Path)]) -> Result<QuadratureRule, SphereError> {
    match lebedev.iter().filter(|(e, _)| *e >= d).min_by_key(|(e, _)| *e) {
        Some((e, path)) => load_lebedev(path, *e),
        None => Ok(build_quadrature(d)),
    }
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn exactness(&self) -> usize {
        self.exactness
    }

    pub fn provenance(&self) -> &RuleProvenance {
        &self.provenance
    }

    /// `Σ w_q f(Ω_q)`
    pub fn integrate<F: Fn(&Vector3<f64>) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    /// `m(Ω_q)` for every node, one row per node.
    pub fn basis_table(&self, basis: &SphericalBasis) -> DMatrix<f64> {
        let mut table = DMatrix::zeros(self.len(), basis.size());
        let mut row = vec![0.0; basis.size()];
        for (q, node) in self.nodes.iter().enumerate() {
            basis.eval_into(node, &mut row);
            for (j, v) in row.iter().enumerate() {
                table[(q, j)] = *v;
            }
        }
        table
    }

    /// Largest error in `∫ Y_{l,m} = √(4π) δ_{l0}` over `l ≤ exactness`.
    pub fn exactness_defect(&self) -> f64 {
        let basis = build_basis(self.exactness);
        let table = self.basis_table(&basis);
        let w = DVector::from_column_slice(&self.weights);
        let integrals = table.transpose() * w;
        integrals
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 { (v - (4.0 * PI).sqrt()).abs() } else { v.abs() })
            .fold(0.0, f64::max)
    }
}

/// `∫ f dΩ` by the rule.
pub fn integrate<F: Fn(&Vector3<f64>) -> f64>(rule: &QuadratureRule, f: F) -> f64 {
    rule.integrate(f)
}

/// Checks `RᵀR = I` and `det R = 1` to 1e-10.
pub fn check_rotation(r: &Matrix3<f64>) -> Result<(), SphereError> {
    let orthogonality = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if orthogonality > 1e-10 || (det - 1.0).abs() > 1e-10 {
        return Err(SphereError::NotRotation { orthogonality, det });
    }
    Ok(())
}

/// Moments of `Ω ↦ I(RᵀΩ)` given the moments `U` of `I`.
///
/// Degree-l harmonics rotate among themselves, so `U' = D U` with
/// `D_ij = ∫ m_i(RΩ) m_j(Ω) dΩ`, integrated exactly by a degree-2N rule.
pub fn rotate_basis_moments(
    u: &DVector<f64>,
    r: &Matrix3<f64>,
    basis: &SphericalBasis,
) -> Result<DVector<f64>, SphereError> {
    check_rotation(r)?;
    if u.len() != basis.size() {
        return Err(SphereError::LengthMismatch { expected: basis.size(), got: u.len() });
    }
    let rule = build_quadrature(2 * basis.degree());
    let plain = rule.basis_table(basis);
    let rotated_rule = QuadratureRule { nodes: rule.nodes.iter().map(|n| r * n).collect(), ..rule.clone() };
    let rotated = rotated_rule.basis_table(basis);
    let weighted = DMatrix::from_fn(rule.len(), basis.size(), |q, j| rule.weights[q] * plain[(q, j)]);
    let d = rotated.transpose() * weighted;
    Ok(d * u)
}
