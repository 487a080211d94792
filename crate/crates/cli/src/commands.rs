//! The seven commands. Each returns its output files in memory; the caller
//! writes them.

use nalgebra::{DVector, Vector3};
use phiclosure::closure::{
    dirac_moments, direction, invert, reconstruct, required_exactness, GridSample, InvertOptions, LatLongGrid,
    MomentVector,
};
use phiclosure::renorm::{build_beta_k, build_taylor, MapRecord, RenormalizationMap, Target};
use phiclosure::sosfit::{build_fit_problem, fit, l2_distance, FitOptions, MomentValidation, SosParameters};
use phiclosure::sphere::{
    build_basis, build_quadrature, select_quadrature, QuadratureRule, SphereError, SphericalBasis,
};
use serde::Serialize;

use crate::config::{Command, FamilyArg, ResolvedMap, RunConfig, TargetArg};
use crate::error::CliError;
use crate::output::{extension, file_stem, render_json, Artifact, Cell, Metadata, Table};

/// Files produced by a run and the non-fatal numerical failures met on the
/// way (non-converged rows or inversions).
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<String>,
}

/// Default `ls` of `error-table`.
pub const DEFAULT_BS_LS: [f64; 3] = [3.0, 5.0, 10.0];
pub const DEFAULT_BE_LS: [f64; 3] = [2.0, 6.0, 10.0];
/// Exactness of the reference rule for L2 errors on the sphere.
pub const SPHERE_ERROR_EXACTNESS: usize = 60;

pub fn run(config: &RunConfig) -> Result<RunOutput, CliError> {
    let maps = config.validate()?;
    match config.command() {
        Command::FitMap => fit_map(config, &maps[0]),
        Command::CompareMaps => compare_maps(config, &maps),
        Command::ErrorTable => error_table(config),
        Command::InvertBeam | Command::InvertDoubleBeam | Command::InvertSixGaussian => invert_suite(config, &maps),
        Command::ErrorDecay => error_decay(config, &maps),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    pub objective: f64,
    pub l2_error: f64,
    pub starts_tried: usize,
    pub converged_starts: usize,
    pub distinct_stationary_points: usize,
    pub seed: u64,
    pub moment_validation: MomentValidation,
    pub w: SosParameters,
}

struct BuiltMap {
    map: RenormalizationMap,
    fit: Option<FitDiagnostics>,
}

fn fit_options(config: &RunConfig) -> FitOptions {
    FitOptions { starts: config.starts, seed: config.seed, ..FitOptions::default() }
}

fn optimized(target: Target, k: u32, a: f64, b: f64, config: &RunConfig) -> Result<BuiltMap, CliError> {
    let numerical =
        |e: &dyn std::fmt::Display| CliError::Numerical(format!("fit of {target} K={k} on [{a}, {b}]: {e}"));
    let problem = build_fit_problem(target, k as usize, a, b).map_err(|e| numerical(&e))?;
    let result = fit(&problem, &fit_options(config)).map_err(|e| numerical(&e))?;
    let fit = FitDiagnostics {
        objective: result.objective,
        l2_error: result.l2_error(&problem),
        starts_tried: result.starts_tried,
        converged_starts: result.converged_starts,
        distinct_stationary_points: result.distinct_stationary_points,
        seed: result.seed,
        moment_validation: problem.validation,
        w: result.w,
    };
    Ok(BuiltMap { map: result.map, fit: Some(fit) })
}

fn build_map(spec: &ResolvedMap, config: &RunConfig) -> Result<BuiltMap, CliError> {
    let target = Target::from(spec.target);
    let plain = |r: Result<RenormalizationMap, _>| {
        r.map(|map| BuiltMap { map, fit: None })
            .map_err(|e: phiclosure::renorm::RenormError| CliError::Numerical(e.to_string()))
    };
    match spec.family {
        FamilyArg::Beta => plain(build_beta_k(spec.k)),
        FamilyArg::Taylor => plain(build_taylor(target, spec.k, spec.x0.expect("validated"))),
        FamilyArg::Optimized => {
            let [a, b] = spec.interval.expect("validated");
            optimized(target, spec.k, a, b, config)
        }
    }
}

fn default_window(map: &RenormalizationMap) -> [f64; 2] {
    let (a, b) = map.validity_interval();
    match map.target() {
        // The Planckian is singular at 0.
        Target::BoseEinstein => [a, b.min(-0.05)],
        Target::BoltzmannShannon => [a, b],
    }
}

fn samples(window: [f64; 2], n: usize) -> impl Iterator<Item = f64> {
    let [a, b] = window;
    (0..n).map(move |i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
}

#[derive(Serialize)]
struct MapReport {
    label: String,
    degree: usize,
    map: MapRecord,
    validity_interval: [f64; 2],
    window: [f64; 2],
    max_abs_error_on_window: f64,
    l2_error_on_window: f64,
    fit: Option<FitDiagnostics>,
}

fn map_report(built: BuiltMap, window: [f64; 2], n_samples: usize) -> MapReport {
    let map = &built.map;
    let target = map.target();
    let max_abs = samples(window, n_samples).map(|x| (map.eval(x) - target.value(x)).abs()).fold(0.0, f64::max);
    let (lo, hi) = map.validity_interval();
    MapReport {
        label: map.label(),
        degree: map.degree(),
        map: map.to_record(),
        validity_interval: [lo, hi],
        window,
        max_abs_error_on_window: max_abs,
        l2_error_on_window: l2_distance(map, target, window[0], window[1]),
        fit: built.fit,
    }
}

const FIT_QUADRATURE: &str =
    "fit moments: 512-point Gauss-Legendre on the fit interval; L2 errors: adaptive Gauss-Kronrod 7/15 (rel 1e-12)";

fn fit_map(config: &RunConfig, spec: &ResolvedMap) -> Result<RunOutput, CliError> {
    let built = build_map(spec, config)?;
    let window = config.window.unwrap_or_else(|| default_window(&built.map));
    let meta = Metadata::new(config, vec![FIT_QUADRATURE.into()]);
    let mut curve = Table::new(&["x", "map", "target", "error"]);
    for x in samples(window, config.samples) {
        let (p, t) = (built.map.eval(x), built.map.target().value(x));
        curve.push(vec![x.into(), p.into(), t.into(), (p - t).into()]);
    }
    let report = map_report(built, window, config.samples);
    Ok(RunOutput {
        artifacts: vec![
            Artifact { name: "map.json".into(), contents: render_json(&meta, &report) },
            Artifact {
                name: format!("curve.{}", extension(config.format)),
                contents: curve.render(&meta, config.format),
            },
        ],
        failures: Vec::new(),
    })
}

#[derive(Serialize)]
struct Models<T: Serialize> {
    models: Vec<T>,
}

fn compare_maps(config: &RunConfig, specs: &[ResolvedMap]) -> Result<RunOutput, CliError> {
    let window = config.window.expect("validated");
    let meta = Metadata::new(config, vec![FIT_QUADRATURE.into()]);
    let mut curves = Table::new(&["model", "x", "map", "target", "error"]);
    let mut reports = Vec::new();
    for spec in specs {
        let built = build_map(spec, config)?;
        let label = built.map.label();
        for x in samples(window, config.samples) {
            let (p, t) = (built.map.eval(x), built.map.target().value(x));
            curves.push(vec![label.clone().into(), x.into(), p.into(), t.into(), (p - t).into()]);
        }
        reports.push(map_report(built, window, config.samples));
    }
    Ok(RunOutput {
        artifacts: vec![
            Artifact { name: "summary.json".into(), contents: render_json(&meta, &Models { models: reports }) },
            Artifact {
                name: format!("curves.{}", extension(config.format)),
                contents: curves.render(&meta, config.format),
            },
        ],
        failures: Vec::new(),
    })
}

/// Fit interval of the error table: `[-L, L]` for the exponential and
/// `[-L, -1/L]` for the Planckian.
pub fn table_interval(target: Target, l: f64) -> (f64, f64) {
    match target {
        Target::BoltzmannShannon => (-l, l),
        Target::BoseEinstein => (-l, -1.0 / l),
    }
}

fn error_table(config: &RunConfig) -> Result<RunOutput, CliError> {
    let targets = match config.target {
        Some(t) => vec![t],
        None => vec![TargetArg::Bs, TargetArg::Be],
    };
    let ks = config.ks.clone().unwrap_or_else(|| (1..=6).collect());
    let meta = Metadata::new(config, vec![FIT_QUADRATURE.into()]);
    let mut table = Table::new(&[
        "target",
        "K",
        "L",
        "a",
        "b",
        "l2_error",
        "relative_l2_error",
        "objective",
        "converged_starts",
        "distinct_stationary_points",
        "status",
    ]);
    let mut failures = Vec::new();
    for t in targets {
        let target = Target::from(t);
        let ls = config.ls.clone().unwrap_or_else(|| match t {
            TargetArg::Bs => DEFAULT_BS_LS.to_vec(),
            TargetArg::Be => DEFAULT_BE_LS.to_vec(),
        });
        for &l in &ls {
            let (a, b) = table_interval(target, l);
            for &k in &ks {
                let head: Vec<Cell> = vec![target.short_name().into(), k.into(), l.into(), a.into(), b.into()];
                let row = build_fit_problem(target, k as usize, a, b)
                    .and_then(|p| fit(&p, &fit_options(config)).map(|r| (p, r)));
                let tail: Vec<Cell> = match row {
                    Ok((p, r)) => {
                        let err = r.l2_error(&p);
                        vec![
                            err.into(),
                            (err / (2.0 * p.target_energy()).sqrt()).into(),
                            r.objective.into(),
                            r.converged_starts.into(),
                            r.distinct_stationary_points.into(),
                            "ok".into(),
                        ]
                    }
                    Err(e) => {
                        failures.push(format!("{target} K={k} L={l}: {e}"));
                        vec![
                            f64::NAN.into(),
                            f64::NAN.into(),
                            f64::NAN.into(),
                            0usize.into(),
                            0usize.into(),
                            format!("failed: {e}").into(),
                        ]
                    }
                };
                table.push(head.into_iter().chain(tail).collect());
            }
        }
    }
    Ok(RunOutput {
        artifacts: vec![Artifact {
            name: format!("error_table.{}", extension(config.format)),
            contents: table.render(&meta, config.format),
        }],
        failures,
    })
}

/// `Σ_k exp(−5‖Ω − Ω_k‖²)` over the six axis directions.
pub fn six_gaussian(v: &Vector3<f64>) -> f64 {
    axis_directions().iter().map(|(_, a)| (-5.0 * (v - a).norm_squared()).exp()).sum()
}

pub fn axis_directions() -> [(&'static str, Vector3<f64>); 6] {
    [
        ("+x", Vector3::x()),
        ("-x", -Vector3::x()),
        ("+y", Vector3::y()),
        ("-y", -Vector3::y()),
        ("+z", Vector3::z()),
        ("-z", -Vector3::z()),
    ]
}

/// Moments of the six-Gaussian intensity by a rule of exactness `2N + 20`.
pub fn six_gaussian_moments(basis: &SphericalBasis) -> MomentVector {
    let rule = build_quadrature(2 * basis.degree() + 20);
    let table = rule.basis_table(basis);
    let values = DVector::from_fn(rule.len(), |q, _| rule.weights()[q] * six_gaussian(&rule.nodes()[q]));
    MomentVector::new(table.transpose() * values)
}

fn inversion_rule(config: &RunConfig, n: usize, map: &RenormalizationMap) -> Result<QuadratureRule, CliError> {
    let d = config.exactness.unwrap_or_else(|| required_exactness(n, map));
    let rule = match (&config.lebedev, config.lebedev_exactness) {
        (Some(path), Some(e)) => select_quadrature(d, &[(e, path.as_path())]),
        _ => Ok(build_quadrature(d)),
    };
    rule.map_err(|e| match e {
        SphereError::Io { path, source } => CliError::Io { path: path.into(), source },
        other => CliError::Config(other.to_string()),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Extremum {
    pub value: f64,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub direction: [f64; 3],
}

impl From<GridSample> for Extremum {
    fn from(s: GridSample) -> Self {
        let d = direction(s.theta, s.phi);
        Self {
            value: s.value,
            theta_deg: s.theta.to_degrees(),
            phi_deg: s.phi.to_degrees(),
            direction: [d.x, d.y, d.z],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub name: String,
    pub direction: [f64; 3],
    pub value: f64,
    /// True intensity where it is a function.
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InversionSummary {
    pub model: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub status: phiclosure::closure::InversionStatus,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub tolerance: f64,
    pub jacobian_min_eigenvalue_estimate: f64,
    pub quadrature: String,
    pub exactness: usize,
    pub nodes: usize,
    pub peak: Extremum,
    pub min: Extremum,
    pub probes: Vec<Probe>,
    /// L2(S²) error against the true intensity (smooth cases only).
    pub l2_error: Option<f64>,
    pub lambda: Vec<f64>,
}

struct Inversion {
    summary: InversionSummary,
    grid: LatLongGrid,
}

fn probe(name: &str, v: Vector3<f64>, value: f64, exact: Option<f64>) -> Probe {
    Probe { name: name.into(), direction: [v.x, v.y, v.z], value, exact }
}

fn invert_one(
    config: &RunConfig,
    command: Command,
    map: &RenormalizationMap,
    n: usize,
    reference: Option<&QuadratureRule>,
) -> Result<Inversion, CliError> {
    let basis = build_basis(n);
    let rule = inversion_rule(config, n, map)?;
    let u = match command {
        Command::InvertBeam => dirac_moments(&basis, &Vector3::z()),
        Command::InvertDoubleBeam => {
            MomentVector::new(dirac_moments(&basis, &Vector3::z()).values + dirac_moments(&basis, &Vector3::x()).values)
        }
        _ => six_gaussian_moments(&basis),
    };
    let report = invert(map, &u, basis, &rule, &InvertOptions::default())
        .map_err(|e| CliError::Numerical(format!("{}: {e}", map.model_label(n))))?;
    let rec = reconstruct(map, &report.lambda, basis);
    let grid = rec.sample_lat_long(config.grid[0], config.grid[1]);
    let probes = match command {
        Command::InvertBeam => vec![probe("+z", Vector3::z(), rec.eval(&Vector3::z()), None)],
        Command::InvertDoubleBeam => [("+z", Vector3::z()), ("+x", Vector3::x()), ("-y", -Vector3::y())]
            .into_iter()
            .map(|(name, v)| probe(name, v, rec.eval(&v), None))
            .collect(),
        _ => axis_directions()
            .into_iter()
            .map(|(name, v)| probe(name, v, rec.eval(&v), Some(six_gaussian(&v))))
            .collect(),
    };
    let l2_error = reference.map(|r| rec.l2_error(six_gaussian, r));
    let summary = InversionSummary {
        model: map.model_label(n),
        n,
        status: report.status,
        converged: report.converged,
        iterations: report.iterations,
        residual_norm: report.residual_norm,
        tolerance: report.tolerance,
        jacobian_min_eigenvalue_estimate: report.jacobian_min_eigenvalue_estimate,
        quadrature: rule.provenance().to_string(),
        exactness: rule.exactness(),
        nodes: rule.len(),
        peak: grid.max().into(),
        min: grid.min().into(),
        probes,
        l2_error,
        lambda: report.lambda.values.iter().copied().collect(),
    };
    Ok(Inversion { summary, grid })
}

fn grid_table(grid: &LatLongGrid) -> Table {
    let mut t = Table::new(&["theta_deg", "phi_deg", "value"]);
    for s in &grid.samples {
        t.push(vec![s.theta.to_degrees().into(), s.phi.to_degrees().into(), s.value.into()]);
    }
    t
}

fn quadrature_lines(summaries: &[InversionSummary], reference: Option<&QuadratureRule>) -> Vec<String> {
    let mut lines: Vec<String> = summaries
        .iter()
        .map(|s| format!("{}: {} (exactness {}, {} nodes)", s.model, s.quadrature, s.exactness, s.nodes))
        .collect();
    if let Some(r) = reference {
        lines.push(format!(
            "L2 reference: {} (exactness {}, {} nodes); moments of the intensity: exactness 2N+20",
            r.provenance(),
            r.exactness(),
            r.len()
        ));
    }
    lines
}

fn invert_suite(config: &RunConfig, specs: &[ResolvedMap]) -> Result<RunOutput, CliError> {
    let command = config.command();
    let n = config.n.expect("validated");
    let reference = (command == Command::InvertSixGaussian).then(|| build_quadrature(SPHERE_ERROR_EXACTNESS));
    let mut inversions = Vec::new();
    for spec in specs {
        let built = build_map(spec, config)?;
        inversions.push(invert_one(config, command, &built.map, n, reference.as_ref())?);
    }
    let summaries: Vec<InversionSummary> = inversions.iter().map(|i| i.summary.clone()).collect();
    let meta = Metadata::new(config, quadrature_lines(&summaries, reference.as_ref()));
    let mut out = RunOutput::default();
    for inv in &inversions {
        if !inv.summary.converged {
            out.failures.push(format!("{}: {:?}", inv.summary.model, inv.summary.status));
        }
        out.artifacts.push(Artifact {
            name: format!("{}_grid.{}", file_stem(&inv.summary.model), extension(config.format)),
            contents: grid_table(&inv.grid).render(&meta, config.format),
        });
    }
    out.artifacts.insert(
        0,
        Artifact { name: "summary.json".into(), contents: render_json(&meta, &Models { models: summaries }) },
    );
    Ok(out)
}

fn error_decay(config: &RunConfig, specs: &[ResolvedMap]) -> Result<RunOutput, CliError> {
    let ns = config.ns.clone().unwrap_or_else(|| (1..=9).collect());
    let reference = build_quadrature(SPHERE_ERROR_EXACTNESS);
    let mut table = Table::new(&["model", "model_label", "N", "l2_error", "iterations", "residual_norm", "status"]);
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for spec in specs {
        let built = build_map(spec, config)?;
        for &n in &ns {
            let label = built.map.model_label(n);
            let head: Vec<Cell> = vec![built.map.label().into(), label.clone().into(), n.into()];
            match invert_one(config, Command::InvertSixGaussian, &built.map, n, Some(&reference)) {
                Ok(inv) => {
                    let s = inv.summary;
                    if !s.converged {
                        failures.push(format!("{label}: {:?}", s.status));
                    }
                    let status = if s.converged { "ok".to_string() } else { format!("{:?}", s.status) };
                    table.push(
                        head.into_iter()
                            .chain([
                                s.l2_error.unwrap_or(f64::NAN).into(),
                                s.iterations.into(),
                                s.residual_norm.into(),
                                status.into(),
                            ])
                            .collect(),
                    );
                    summaries.push(s);
                }
                Err(e) => {
                    failures.push(format!("{label}: {e}"));
                    table.push(
                        head.into_iter()
                            .chain([f64::NAN.into(), 0usize.into(), f64::NAN.into(), format!("failed: {e}").into()])
                            .collect(),
                    );
                }
            }
        }
    }
    let meta = Metadata::new(config, quadrature_lines(&summaries, Some(&reference)));
    Ok(RunOutput {
        artifacts: vec![Artifact {
            name: format!("error_decay.{}", extension(config.format)),
            contents: table.render(&meta, config.format),
        }],
        failures,
    })
}

/// Least-squares slope and R² of `ln e` against `N`.
pub fn log_linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Exact value of the six-Gaussian intensity at an axis point.
pub fn six_gaussian_axis_value() -> f64 {
    1.0 + 4.0 * (-10f64).exp() + (-20f64).exp()
}
