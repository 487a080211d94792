use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use phiclosure::closure::*;
use phiclosure::renorm::{build_beta_k, build_taylor, eta_k, eta_k_derivative, RenormalizationMap, Target};
use phiclosure::sosfit::{build_fit_problem, fit, FitOptions};
use phiclosure::sphere::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Unit::new_normalize(random_unit(rng));
    *Rotation3::from_axis_angle(&axis, rng.random_range(0.0..2.0 * PI)).matrix()
}

fn optimized(target: Target, k: usize, a: f64, b: f64) -> RenormalizationMap {
    let problem = build_fit_problem(target, k, a, b).unwrap();
    let options = FitOptions { starts: 64, ..FitOptions::default() };
    fit(&problem, &options).unwrap().map
}

/// Maps of degree at most five from every family and both targets.
fn map_zoo() -> Vec<RenormalizationMap> {
    let bs = Target::BoltzmannShannon;
    let be = Target::BoseEinstein;
    vec![
        build_beta_k(1).unwrap(),
        build_beta_k(3).unwrap(),
        build_beta_k(5).unwrap(),
        build_taylor(bs, 1, 0.0).unwrap(),
        build_taylor(bs, 2, -1.0).unwrap(),
        build_taylor(be, 1, -2.6).unwrap(),
        build_taylor(be, 2, -3.0).unwrap(),
        optimized(bs, 1, -2.0, 2.0),
        optimized(bs, 2, -5.0, 5.0),
        optimized(be, 1, -5.0, -0.5),
        optimized(be, 2, -5.0, -0.2),
    ]
}

/// `λ` whose argument `λᵀm` stays within the middle half of the map's
/// validity interval, using `Σ_{l≥1,m} Y_lm² = ((N+1)² − 1)/4π`.
fn random_lambda(map: &RenormalizationMap, basis: &SphericalBasis, rng: &mut ChaCha8Rng) -> EntropicVariables {
    let (lo, hi) = map.validity_interval();
    let center = 0.5 * (lo + hi) + rng.random_range(-0.1..0.1) * (hi - lo);
    let n = basis.size();
    let mut rest = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    rest[0] = 0.0;
    if n > 1 {
        let bound = 0.2 * (hi - lo) / (((n - 1) as f64) / (4.0 * PI)).sqrt();
        rest *= bound / rest.norm();
    }
    let mut lambda = EntropicVariables::isotropic(n, center);
    lambda.values += rest;
    lambda
}

fn rel_max(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

#[test]
fn moments_match_over_resolved_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let map = build_taylor(Target::BoltzmannShannon, 2, 0.0).unwrap();
    let basis = build_basis(3);
    let d = required_exactness(3, &map);
    let (rule, fine) = (build_quadrature(d), build_quadrature(d + 20));
    for _ in 0..10 {
        let lambda = random_lambda(&map, &basis, &mut rng);
        let u = moments_of(&map, &lambda, basis, &rule).unwrap();
        let oracle: DVector<f64> = DVector::from_fn(basis.size(), |i, _| {
            fine.integrate(|v| basis.eval(v)[i] * map.eval(basis.eval(v).dot(&lambda.values)))
        });
        assert!(rel_max(&u.values, &oracle) < 1e-11);
    }
}

#[test]
fn exactness_covers_the_integrands() {
    // Degree of m·β(λᵀm) is N(2K+2); the flux adds one.
    let map = build_beta_k(5).unwrap();
    for n in 0..=9 {
        assert!(required_exactness(n, &map) > n * 6);
    }
}

#[test]
fn affine_map_gives_affine_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = build_beta_k(1).unwrap();
    let basis = build_basis(3);
    let rule = build_quadrature(required_exactness(3, &map));
    let lambda = EntropicVariables::new(DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0)));
    let u = moments_of(&map, &lambda, basis, &rule).unwrap();
    let mut want = lambda.values.clone();
    want[0] += (4.0 * PI).sqrt();
    assert!((u.values - want).amax() < 1e-13);
}

#[test]
fn jacobian_is_symmetric_and_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for map in map_zoo() {
        for n in 1..=3 {
            let basis = build_basis(n);
            let rule = build_quadrature(required_exactness(n, &map));
            let model = MomentModel::new(&map, basis, &rule);
            let lambda = random_lambda(&map, &basis, &mut rng);
            let j = model.jacobian(&lambda).unwrap();
            assert!((&j - j.transpose()).amax() <= 1e-11);
            let h = 1e-6;
            let fd = DMatrix::from_fn(basis.size(), basis.size(), |_, _| 0.0);
            let mut fd = fd;
            for c in 0..basis.size() {
                let mut plus = lambda.clone();
                let mut minus = lambda.clone();
                plus.values[c] += h;
                minus.values[c] -= h;
                let col = (model.moments(&plus).unwrap().values - model.moments(&minus).unwrap().values) / (2.0 * h);
                fd.set_column(c, &col);
            }
            let err = (&fd - &j).amax() / j.amax();
            assert!(err < 1e-5, "{} N={n}: {err:e}", map.model_label(n));
        }
    }
}

#[test]
fn collision_conserves_energy_and_vanishes_on_equilibria() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for map in map_zoo() {
        let basis = build_basis(2);
        let rule = build_quadrature(required_exactness(2, &map) + 1);
        let lambda = random_lambda(&map, &basis, &mut rng);
        let (_, lu) = flux_and_collision_moments(&map, &lambda, basis, &rule, 1.0).unwrap();
        assert!(lu.values[0].abs() <= 1e-12, "{}", lu.values[0]);
        assert!(lu.values.amax() > 1e-10);

        let iso = EntropicVariables::isotropic(basis.size(), lambda.values[0] / (4.0 * PI).sqrt());
        let (flux, lu) = flux_and_collision_moments(&map, &iso, basis, &rule, 2.5).unwrap();
        assert!(lu.values.amax() <= 1e-10);
        // Only the l = 1 flux moments survive: ∫ Ω_d Y_1m dΩ = √(4π/3) δ.
        let c = map.eval(lambda.values[0] / (4.0 * PI).sqrt());
        for (d, m) in [(0, 1), (1, -1), (2, 0)] {
            let mut want = DVector::zeros(basis.size());
            want[SphericalBasis::index(1, m)] = c * (4.0 * PI / 3.0).sqrt();
            assert!((&flux[d].values - want).amax() <= 1e-12 * c.abs().max(1.0));
        }
    }
}

#[test]
fn flux_matches_direct_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let map = build_beta_k(3).unwrap();
    let basis = build_basis(2);
    let rule = build_quadrature(required_exactness(2, &map));
    let fine = build_quadrature(40);
    let lambda = random_lambda(&map, &basis, &mut rng);
    let (flux, _) = flux_and_collision_moments(&map, &lambda, basis, &rule, 0.0).unwrap();
    for d in 0..3 {
        let oracle = DVector::from_fn(basis.size(), |i, _| {
            fine.integrate(|v| v[d] * basis.eval(v)[i] * map.eval(basis.eval(v).dot(&lambda.values)))
        });
        assert!((&flux[d].values - &oracle).amax() < 1e-12 * oracle.amax().max(1.0));
    }
}

#[test]
fn round_trip_recovers_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for map in map_zoo() {
        for n in 0..=3 {
            let basis = build_basis(n);
            let rule = build_quadrature(required_exactness(n, &map));
            for _ in 0..3 {
                let lambda = random_lambda(&map, &basis, &mut rng);
                let u = moments_of(&map, &lambda, basis, &rule).unwrap();
                let options = InvertOptions { tol: 1e-12, ..InvertOptions::default() };
                let report = invert(&map, &u, basis, &rule, &options).unwrap();
                assert!(report.converged, "{} {:?}", map.model_label(n), report.status);
                assert!(report.residual_norm <= report.tolerance);
                let err = (&report.lambda.values - &lambda.values).amax();
                assert!(err < 1e-8, "{}: {err:e}", map.model_label(n));
                assert!(report.jacobian_min_eigenvalue_estimate > 0.0);
            }
        }
    }
}

#[test]
fn isotropic_target_matches_inverse_map() {
    let basis = build_basis(2);
    let map = build_beta_k(3).unwrap();
    let rule = build_quadrature(required_exactness(2, &map));
    for c in [0.2, 1.0, 2.0, 7.5] {
        let mut u = DVector::zeros(basis.size());
        u[0] = c * (4.0 * PI).sqrt();
        let report = invert(&map, &MomentVector::new(u), basis, &rule, &InvertOptions::default()).unwrap();
        let want = (4.0 * PI).sqrt() * eta_k_derivative(3, c).unwrap();
        assert!((report.lambda.values[0] - want).abs() < 1e-10);
        assert!(report.lambda.values.rows(1, 8).amax() < 1e-12);
    }
}

#[test]
fn isotropic_target_matches_bisection_for_taylor_map() {
    let map = build_taylor(Target::BoseEinstein, 2, -2.6).unwrap();
    let basis = build_basis(1);
    let rule = build_quadrature(required_exactness(1, &map));
    let c = 0.3;
    let (mut lo, mut hi) = (-10.0, 0.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if map.eval(mid) < c {
            lo = mid
        } else {
            hi = mid
        }
    }
    let mut u = DVector::zeros(4);
    u[0] = c * (4.0 * PI).sqrt();
    let report = invert(&map, &MomentVector::new(u), basis, &rule, &InvertOptions::default()).unwrap();
    assert!((report.lambda.values[0] / (4.0 * PI).sqrt() - lo).abs() < 1e-10);
}

#[test]
fn single_beam_peak_stays_below_one() {
    let map = build_beta_k(5).unwrap();
    let basis = build_basis(1);
    let rule = build_quadrature(required_exactness(1, &map));
    let u = dirac_moments(&basis, &Vector3::z());
    let report = invert(&map, &u, basis, &rule, &InvertOptions::default()).unwrap();
    assert!(report.converged);
    let rec = reconstruct(&map, &report.lambda, basis);
    let grid = rec.sample_lat_long(181, 360);
    let peak = grid.max();
    assert!(peak.value < 1.0);
    assert!(peak.theta < 1f64.to_radians());
    assert!(rec.eval(&Vector3::z()) < 1.0);
    assert!(rec.eval(&Vector3::z()) >= peak.value);
}

#[test]
fn beam_inversion_is_rotation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let map = build_beta_k(5).unwrap();
    for n in [1, 2] {
        let basis = build_basis(n);
        let rule = build_quadrature(required_exactness(n, &map));
        let base =
            invert(&map, &dirac_moments(&basis, &Vector3::z()), basis, &rule, &InvertOptions::default()).unwrap();
        let base = reconstruct(&map, &base.lambda, basis);
        for _ in 0..5 {
            let r = random_rotation(&mut rng);
            let u = dirac_moments(&basis, &(r * Vector3::z()));
            let report = invert(&map, &u, basis, &rule, &InvertOptions::default()).unwrap();
            assert!(report.converged);
            let rotated = reconstruct(&map, &report.lambda, basis);
            for _ in 0..50 {
                let v = random_unit(&mut rng);
                assert!((rotated.eval(&(r * v)) - base.eval(&v)).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn solver_output_minimizes_entropy_under_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in [1u32, 3] {
        let map = build_beta_k(k).unwrap();
        let basis = build_basis(2);
        let rule = build_quadrature(required_exactness(2, &map));
        let mut lambda = EntropicVariables::isotropic(basis.size(), 0.4);
        for i in 1..basis.size() {
            lambda.values[i] = rng.random_range(-0.15..0.15);
        }
        let u = moments_of(&map, &lambda, basis, &rule).unwrap();
        let solved = invert(&map, &u, basis, &rule, &InvertOptions::default()).unwrap();
        assert!(solved.converged);

        let table = rule.basis_table(&basis);
        let w = DVector::from_row_slice(rule.weights());
        let h: DVector<f64> = (&table * &solved.lambda.values).map(|x| map.eval(x));
        assert!(h.min() > 0.0);
        let entropy =
            |h: &DVector<f64>| -> f64 { h.iter().zip(w.iter()).map(|(&h, &w)| w * eta_k(k, h).unwrap()).sum() };
        let h0 = entropy(&h);

        let weighted = DMatrix::from_fn(table.nrows(), table.ncols(), |q, j| w[q] * table[(q, j)]);
        let gram = table.transpose() * &weighted;
        let gram_inv = gram.cholesky().unwrap();
        for _ in 0..100 {
            let z = DVector::from_fn(rule.len(), |_, _| rng.random_range(-1.0..1.0));
            let coeff = gram_inv.solve(&(weighted.transpose() * &z));
            let delta = z - &table * coeff;
            assert!((weighted.transpose() * &delta).amax() < 1e-12);
            let scale = rng.random_range(0.01..0.9) * h.min() / delta.amax();
            let perturbed = &h + delta * scale;
            assert!(entropy(&perturbed) >= h0 - 1e-9);
        }
    }
}

#[test]
fn dirac_moments_are_basis_values() {
    let basis = build_basis(3);
    let d = Vector3::new(1.0, 2.0, -2.0);
    let u = dirac_moments(&basis, &d);
    assert_eq!(u.values, basis.eval(&(d / 3.0)));
}

#[test]
fn reconstruction_l2_error_of_exact_ansatz_is_zero() {
    let map = build_beta_k(3).unwrap();
    let basis = build_basis(1);
    let lambda = EntropicVariables::new(DVector::from_vec(vec![0.5, 0.1, -0.2, 0.3]));
    let rec = reconstruct(&map, &lambda, basis);
    let fine = build_quadrature(60);
    let exact = |v: &Vector3<f64>| map.eval(basis.eval(v).dot(&lambda.values));
    assert!(rec.l2_error(exact, &fine) < 1e-12);
    assert!(rec.l2_error(|v| exact(v) + 1.0, &fine) - (4.0 * PI).sqrt() < 1e-12);
}

#[test]
fn report_serializes() {
    let map = build_beta_k(1).unwrap();
    let basis = build_basis(1);
    let rule = build_quadrature(required_exactness(1, &map));
    let u = MomentVector::new(DVector::from_vec(vec![4.0, 0.1, 0.0, 0.2]));
    let report = invert(&map, &u, basis, &rule, &InvertOptions::default()).unwrap();
    let json: serde_json::Value = serde_json::to_value(&report).unwrap();
    assert_eq!(json["status"], "converged");
    assert_eq!(json["lambda"]["values"].as_array().unwrap().len(), 4);
}

#[test]
fn singular_problem_is_reported_not_panicking() {
    // A one-node rule cannot resolve four moments.
    let map = build_beta_k(1).unwrap();
    let basis = build_basis(1);
    let rule = build_quadrature(0);
    let u = dirac_moments(&basis, &Vector3::z());
    let report = invert(&map, &u, basis, &rule, &InvertOptions::default()).unwrap();
    assert!(!report.converged);
    assert!(report.residual_norm.is_finite());
}
