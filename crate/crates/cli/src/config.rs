//! Run configuration: a flat JSON object, optionally a list of map specs,
//! merged with command-line overrides and validated before anything runs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use phiclosure::renorm::Target;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Largest polynomial degree any map may have.
pub const MAX_DEGREE: u32 = 13;
/// Largest harmonic order accepted for inversion commands.
pub const MAX_N: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    FitMap,
    CompareMaps,
    ErrorTable,
    InvertBeam,
    InvertDoubleBeam,
    InvertSixGaussian,
    ErrorDecay,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::FitMap => "fit-map",
            Command::CompareMaps => "compare-maps",
            Command::ErrorTable => "error-table",
            Command::InvertBeam => "invert-beam",
            Command::InvertDoubleBeam => "invert-double-beam",
            Command::InvertSixGaussian => "invert-six-gaussian",
            Command::ErrorDecay => "error-decay",
        }
    }

    fn is_inversion(self) -> bool {
        matches!(
            self,
            Command::InvertBeam | Command::InvertDoubleBeam | Command::InvertSixGaussian | Command::ErrorDecay
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Beta,
    Taylor,
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TargetArg {
    Bs,
    Be,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Bs => Target::BoltzmannShannon,
            TargetArg::Be => Target::BoseEinstein,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// One map as written in a config's `maps` list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub family: Option<FamilyArg>,
    pub target: Option<TargetArg>,
    #[serde(rename = "K")]
    pub k: Option<u32>,
    pub x0: Option<f64>,
    pub interval: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub family: Option<FamilyArg>,
    pub target: Option<TargetArg>,
    #[serde(rename = "K")]
    pub k: Option<u32>,
    pub x0: Option<f64>,
    pub interval: Option<[f64; 2]>,
    /// Several maps for the multi-model commands; replaces the flat map.
    #[serde(default)]
    pub maps: Vec<MapSpec>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    /// `N` grid of `error-decay`.
    pub ns: Option<Vec<usize>>,
    /// `K` grid of `error-table`.
    pub ks: Option<Vec<u32>>,
    /// Interval-size grid of `error-table`.
    pub ls: Option<Vec<f64>>,
    /// Quadrature exactness override; must cover the required degree.
    pub exactness: Option<usize>,
    /// Optional Lebedev rule file and its claimed exactness.
    pub lebedev: Option<PathBuf>,
    pub lebedev_exactness: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Plotting window of `fit-map` and `compare-maps`.
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Lat-long export grid `[n_theta, n_phi]`.
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

fn default_starts() -> usize {
    500
}

fn default_samples() -> usize {
    401
}

fn default_grid() -> [usize; 2] {
    [181, 360]
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub target: Option<TargetArg>,
    pub family: Option<FamilyArg>,
    pub k: Option<u32>,
    pub n: Option<usize>,
    pub interval: Option<[f64; 2]>,
    pub x0: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies flag overrides. Map fields apply to every entry of `maps`
    /// if it is given and to the flat map otherwise.
    pub fn apply(&mut self, command: Command, o: &Overrides) -> Result<(), CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config is for '{}' but the command is '{}'",
                    c.name(),
                    command.name()
                )));
            }
        }
        self.command = Some(command);
        let apply_map = |family: &mut Option<FamilyArg>,
                         target: &mut Option<TargetArg>,
                         k: &mut Option<u32>,
                         x0: &mut Option<f64>,
                         interval: &mut Option<[f64; 2]>| {
            if o.family.is_some() {
                *family = o.family;
            }
            if o.target.is_some() {
                *target = o.target;
            }
            if o.k.is_some() {
                *k = o.k;
            }
            if o.x0.is_some() {
                *x0 = o.x0;
            }
            if o.interval.is_some() {
                *interval = o.interval;
            }
        };
        if self.maps.is_empty() {
            apply_map(&mut self.family, &mut self.target, &mut self.k, &mut self.x0, &mut self.interval);
        }
        for m in &mut self.maps {
            apply_map(&mut m.family, &mut m.target, &mut m.k, &mut m.x0, &mut m.interval);
        }
        if o.n.is_some() {
            self.n = o.n;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if let Some(f) = o.format {
            self.format = f;
        }
        Ok(())
    }

    fn flat_map(&self) -> Option<MapSpec> {
        let spec =
            MapSpec { family: self.family, target: self.target, k: self.k, x0: self.x0, interval: self.interval };
        (spec != MapSpec::default()).then_some(spec)
    }

    /// The maps the command runs on: `maps` if given, else the flat map.
    pub fn map_specs(&self) -> Result<Vec<MapSpec>, CliError> {
        match (self.maps.is_empty(), self.flat_map()) {
            (false, Some(_)) => Err(CliError::Config(
                "give either the flat map fields (family, target, K, x0, interval) or 'maps', not both".into(),
            )),
            (false, None) => Ok(self.maps.clone()),
            (true, Some(m)) => Ok(vec![m]),
            (true, None) => Ok(Vec::new()),
        }
    }

    pub fn command(&self) -> Command {
        self.command.expect("set by apply")
    }

    /// Checks every constraint and resolves the map list.
    pub fn validate(&self) -> Result<Vec<ResolvedMap>, CliError> {
        let command = self.command.ok_or_else(|| CliError::Config("no command given".into()))?;
        let bad = |m: String| Err(CliError::Config(m));
        if self.starts == 0 {
            return bad("'starts' must be at least 1".into());
        }
        if self.samples < 2 {
            return bad("'samples' must be at least 2".into());
        }
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return bad("'grid' dimensions must be positive".into());
        }
        if self.lebedev.is_some() != self.lebedev_exactness.is_some() {
            return bad("'lebedev' and 'lebedev_exactness' must be given together".into());
        }
        let maps = if command == Command::ErrorTable {
            if !self.maps.is_empty()
                || self.family.is_some()
                || self.k.is_some()
                || self.x0.is_some()
                || self.interval.is_some()
            {
                return bad("error-table takes 'target', 'ks' and 'ls'; not maps, family, K, x0 or interval".into());
            }
            Vec::new()
        } else {
            self.map_specs()?
                .iter()
                .enumerate()
                .map(|(i, m)| resolve_map(m).map_err(|e| CliError::Config(format!("map {}: {e}", i + 1))))
                .collect::<Result<Vec<_>, _>>()?
        };

        match command {
            Command::FitMap => {
                if maps.len() != 1 {
                    return bad(format!("fit-map takes exactly one map, got {}", maps.len()));
                }
            }
            Command::CompareMaps => {
                if maps.is_empty() {
                    return bad("compare-maps needs at least one map".into());
                }
                if self.window.is_none() {
                    return bad("compare-maps needs a plotting 'window'".into());
                }
            }
            Command::ErrorTable => {
                if let Some(ks) = &self.ks {
                    if ks.is_empty() || ks.iter().any(|&k| k == 0 || 2 * k + 1 > MAX_DEGREE) {
                        return bad(format!("'ks' entries must lie in 1..={}", (MAX_DEGREE - 1) / 2));
                    }
                }
                if let Some(ls) = &self.ls {
                    let be = self.target == Some(TargetArg::Be) || self.target.is_none();
                    if ls.is_empty() || ls.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                        return bad("'ls' entries must be positive".into());
                    }
                    if be && ls.iter().any(|&l| !(l > 1.0)) {
                        return bad("Bose-Einstein intervals [-L, -1/L] need L > 1".into());
                    }
                }
            }
            Command::InvertBeam | Command::InvertDoubleBeam | Command::InvertSixGaussian | Command::ErrorDecay => {
                if maps.is_empty() {
                    return bad(format!("{} needs at least one map", command.name()));
                }
            }
        }

        if command.is_inversion() {
            let ns: Vec<usize> = if command == Command::ErrorDecay {
                self.ns.clone().unwrap_or_else(|| (1..=9).collect())
            } else {
                match self.n {
                    Some(n) => vec![n],
                    None => return bad(format!("{} needs 'N'", command.name())),
                }
            };
            if ns.is_empty() {
                return bad("'ns' must not be empty".into());
            }
            for &n in &ns {
                if n > MAX_N {
                    return bad(format!("N = {n} exceeds the limit {MAX_N}"));
                }
                if command == Command::InvertDoubleBeam && n < 2 {
                    return bad(format!("invert-double-beam requires N >= 2, got {n}"));
                }
                if matches!(command, Command::InvertBeam | Command::InvertSixGaussian) && n < 1 {
                    return bad(format!("{} requires N >= 1", command.name()));
                }
                if let Some(d) = self.exactness {
                    for m in &maps {
                        let need = n * (m.degree() as usize + 1) + 2;
                        if d < need {
                            return bad(format!(
                                "'exactness' {d} is below the {need} required for N = {n} and degree {}",
                                m.degree()
                            ));
                        }
                    }
                }
            }
        } else if self.n.is_some() || self.ns.is_some() || self.exactness.is_some() || self.lebedev.is_some() {
            return bad(format!("{} does not use N, ns, exactness or lebedev", command.name()));
        }

        if let Some([a, b]) = self.window {
            if !(a < b && a.is_finite() && b.is_finite()) {
                return bad(format!("'window' [{a}, {b}] must satisfy a < b"));
            }
            if b >= 0.0 && maps.iter().any(|m| m.target == TargetArg::Be) {
                return bad("the Bose-Einstein target needs a window inside x < 0".into());
            }
        }
        Ok(maps)
    }
}

/// A validated map spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedMap {
    pub family: FamilyArg,
    pub target: TargetArg,
    #[serde(rename = "K")]
    pub k: u32,
    pub x0: Option<f64>,
    pub interval: Option<[f64; 2]>,
}

impl ResolvedMap {
    pub fn degree(&self) -> u32 {
        match self.family {
            FamilyArg::Beta => self.k,
            _ => 2 * self.k + 1,
        }
    }
}

fn resolve_map(m: &MapSpec) -> Result<ResolvedMap, String> {
    let family = m.family.ok_or("'family' is required")?;
    let k = m.k.ok_or("'K' is required")?;
    let target = match (family, m.target) {
        (FamilyArg::Beta, Some(TargetArg::Be)) => return Err("family beta targets the exponential ('bs') only".into()),
        (FamilyArg::Beta, _) => TargetArg::Bs,
        (_, Some(t)) => t,
        (_, None) => return Err("'target' is required".into()),
    };
    let resolved = ResolvedMap { family, target, k, x0: m.x0, interval: m.interval };
    if resolved.degree() > MAX_DEGREE {
        return Err(format!("degree {} exceeds {MAX_DEGREE}", resolved.degree()));
    }
    match family {
        FamilyArg::Beta => {
            if k % 2 == 0 {
                return Err(format!("family beta needs an odd K, got {k}"));
            }
            if m.x0.is_some() || m.interval.is_some() {
                return Err("family beta takes neither x0 nor interval".into());
            }
        }
        FamilyArg::Taylor => {
            let x0 = m.x0.ok_or("family taylor needs 'x0'")?;
            if !x0.is_finite() {
                return Err("'x0' must be finite".into());
            }
            if target == TargetArg::Be && !(x0 < 0.0) {
                return Err(format!("the Bose-Einstein target needs x0 < 0, got {x0}"));
            }
            if m.interval.is_some() {
                return Err("family taylor takes x0, not interval".into());
            }
        }
        FamilyArg::Optimized => {
            let [a, b] = m.interval.ok_or("family optimized needs 'interval'")?;
            if !(a < b && a.is_finite() && b.is_finite()) {
                return Err(format!("interval [{a}, {b}] must satisfy a < b"));
            }
            if target == TargetArg::Be && !(b < 0.0) {
                return Err(format!("the Bose-Einstein target needs an interval inside x < 0, got [{a}, {b}]"));
            }
            if m.x0.is_some() {
                return Err("family optimized takes interval, not x0".into());
            }
        }
    }
    Ok(resolved)
}
