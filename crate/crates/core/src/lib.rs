//! Monotone polynomial renormalization maps and the spherical moment
//! inversion they enable.
//!
//! The crate is organized bottom-up:
//!
//! - [`poly`]: dense univariate polynomials.
//! - [`special`]: integer-order incomplete gamma and polylogarithm.
//! - [`quadrature`]: Gauss–Legendre rules and adaptive Gauss–Kronrod.
//! - [`renorm`]: target functions, `β_K`, and Taylor maps.
//! - [`sosfit`]: L2-optimal monotone fits via a sum-of-squares derivative.
//! - [`sphere`]: real spherical harmonics and exact spherical quadrature.
//! - [`closure`]: moment evaluation, collision/flux moments, and inversion.

// NaN-rejecting comparisons are written as `!(x >= y)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod closure;
pub mod poly;
pub mod quadrature;
pub mod renorm;
pub mod sosfit;
pub mod special;
pub mod sphere;

pub use poly::Polynomial;
pub use renorm::{build_beta_k, build_taylor, RenormalizationMap, Target};
