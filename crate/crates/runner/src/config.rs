//! TOML run configuration.
//!
//! Every key is optional; an empty file selects the reference within-host
//! parameterization, the reference spatial extension and no scenarios.
//!
//! ```toml
//! [model]
//! k2 = 1000.0
//! p2 = "quadratic"      # or "linear"
//! eta = 0.9             # constant η; omit for 1/(1+ε)
//!
//! [spatial]
//! dim = 2
//! n = 32
//! diffusivity = 0.01
//!
//! [run]
//! matrix = "paper_ode"  # or "paper_pde"
//! scheme = "euler"      # or "rk4"
//! measurement = "exact" # or "finite_difference"
//! record_stride = 10
//! t_end = 1.0
//!
//! [[scenario]]
//! model = "ode"
//! theta0 = 0.75
//! v0 = 0.5
//! rho0 = 0.25
//! ```
//!
//! `b2`, `b3` and `eta_star` are derived from `v_max` and `epsilon` when
//! absent. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use anthracnose_core::forcing::{default_b2, default_b3};
use anthracnose_core::{BaseRate, EtaMode, MeasurementMode, Parameters, Scheme, SpatialParameters, VolumeWeight};
use serde::{Deserialize, Serialize};

use crate::scenario::{scenario_matrix, GridSpec, MatrixKind, ModelKind, Scenario};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2: Option<VolumeWeightName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeWeightName {
    Linear,
    Quadratic,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusivity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anisotropy_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_center: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_centers: Option<[[f64; 2]; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_factors: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementName {
    Exact,
    FiniteDifference,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: ModelKind,
    pub theta0: f64,
    pub v0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeName>,
}

/// Raw file contents.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub spatial: SpatialSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, rename = "scenario", skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioSection>,
}

/// Execution options shared by every scenario of a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub matrix: Option<MatrixKind>,
    pub scheme: Scheme,
    pub measurement: MeasurementMode,
    pub record_stride: usize,
    pub t_end: f64,
    /// Floor of the relative error.
    pub floor: f64,
    /// Relative slack of envelope comparisons.
    pub tolerance: f64,
    /// Estimate `∂v/∂θ` with paired perturbed runs.
    pub sensitivity: bool,
    pub grid: GridSpec,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            matrix: None,
            scheme: Scheme::Euler,
            measurement: MeasurementMode::Exact,
            record_stride: 10,
            t_end: 1.0,
            floor: anthracnose_core::metrics::DEFAULT_FLOOR,
            tolerance: anthracnose_core::metrics::DEFAULT_TOLERANCE,
            sensitivity: false,
            grid: GridSpec { dim: 2, n: 32 },
        }
    }
}

/// A validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    /// Spatial extension; `spatial.base` is the within-host parameter set.
    pub spatial: SpatialParameters,
    pub run: RunSettings,
    pub scenarios: Vec<Scenario>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            spatial: SpatialParameters::table2(Parameters::table1()),
            run: RunSettings::default(),
            scenarios: Vec::new(),
        }
    }
}

impl Settings {
    pub fn params(&self) -> &Parameters {
        &self.spatial.base
    }

    /// Within-host parameters with the gains of `scenario`.
    pub fn scenario_params(&self, scenario: &Scenario) -> Parameters {
        self.spatial.base.with_gains(scenario.k1, scenario.k2)
    }

    /// Spatial parameters with the gains of `scenario`.
    pub fn scenario_spatial(&self, scenario: &Scenario) -> SpatialParameters {
        SpatialParameters {
            base: self.scenario_params(scenario),
            ..self.spatial.clone()
        }
    }
}

/// One problem found while loading a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: invalid configuration\n{}", join(.diagnostics))]
    Invalid { origin: String, diagnostics: Vec<Diagnostic> },
}

fn join(diagnostics: &[Diagnostic]) -> String {
    diagnostics.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ConfigError::Io { .. } => &[],
            ConfigError::Invalid { diagnostics, .. } => diagnostics,
        }
    }
}

const KEYS: &[&str] = &[
    "b1", "b2", "b3", "c1", "c2", "c3", "d1", "d2", "d3", "omega1", "omega2", "phase1", "phase2", "sigma",
    "epsilon", "eta_star", "eta", "v_max", "kappa", "k1", "k2", "p1", "p2", "dt", "seed", "diffusivity",
    "anisotropy_scale", "K1", "K2", "theta0", "v0", "rho0", "t_end", "record_stride", "floor", "tolerance", "n",
    "dim",
];

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment at or after line `from`.
fn key_line(text: &str, key: &str, from: usize) -> Option<usize> {
    text.lines().enumerate().skip(from.saturating_sub(1)).find_map(|(i, line)| {
        let (lhs, _) = line.split_once('=')?;
        (lhs.trim() == key).then_some(i + 1)
    })
}

/// Line of the first known key named in `message` that the file assigns.
fn message_line(text: &str, message: &str, from: usize) -> Option<usize> {
    let words: Vec<&str> = message
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .collect();
    words.iter().filter(|w| KEYS.contains(w)).find_map(|w| key_line(text, &w.to_lowercase(), from))
}

/// Line where the `index`-th `[[scenario]]` table starts.
fn scenario_line(text: &str, index: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == "[[scenario]]")
        .nth(index)
        .map(|(i, _)| i + 1)
}

fn build_params(m: &ModelSection) -> Parameters {
    let mut p = Parameters::table1();
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(x) = m.$field { p.$field = x; })*
        };
    }
    take!(b1, c1, c2, c3, d1, d2, d3, omega1, omega2, phase1, phase2, sigma, epsilon, v_max, kappa, k1, k2, dt);
    p.eta_star = m.eta_star.unwrap_or(1.0 / (1.0 + p.epsilon));
    p.b2 = m.b2.unwrap_or_else(|| default_b2(p.v_max, p.epsilon, p.eta_star));
    p.b3 = m.b3.unwrap_or_else(|| default_b3(p.v_max));
    p.eta_mode = m.eta.map_or(EtaMode::Regularized, EtaMode::Constant);
    p.p1 = match m.p1 {
        None => BaseRate::Zero,
        Some(x) => BaseRate::Constant(x),
    };
    p.p2 = match m.p2 {
        Some(VolumeWeightName::Quadratic) => VolumeWeight::Quadratic,
        _ => VolumeWeight::Linear,
    };
    if let Some(seed) = m.seed {
        p.seed = seed;
    }
    p
}

fn scheme_of(name: Option<SchemeName>, default: Scheme) -> Scheme {
    match name {
        Some(SchemeName::Euler) => Scheme::Euler,
        Some(SchemeName::Rk4) => Scheme::Rk4,
        None => default,
    }
}

fn measurement_of(name: Option<MeasurementName>, default: MeasurementMode) -> MeasurementMode {
    match name {
        Some(MeasurementName::Exact) => MeasurementMode::Exact,
        Some(MeasurementName::FiniteDifference) => MeasurementMode::FiniteDifference,
        None => default,
    }
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str, origin: &str) -> Result<Settings, ConfigError> {
    let invalid = |diagnostics| ConfigError::Invalid {
        origin: origin.to_string(),
        diagnostics,
    };
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        invalid(vec![Diagnostic {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        }])
    })?;
    let mut diagnostics = Vec::new();
    let base = build_params(&file.model);
    for v in base.validate().errors() {
        diagnostics.push(Diagnostic {
            line: message_line(text, &v.message, 1),
            message: v.to_string(),
        });
    }

    let defaults = SpatialParameters::table2(base.clone());
    let s = &file.spatial;
    let spatial = SpatialParameters {
        diffusivity: s.diffusivity.unwrap_or(defaults.diffusivity),
        anisotropy_scale: s.anisotropy_scale.unwrap_or(defaults.anisotropy_scale),
        control_center: s.control_center.unwrap_or(defaults.control_center),
        q_centers: s.q_centers.unwrap_or(defaults.q_centers),
        unit_factors: s.unit_factors.unwrap_or(false),
        ..defaults
    };
    for v in spatial.validate().errors().filter(|v| !base.validate().violations.contains(v)) {
        diagnostics.push(Diagnostic {
            line: message_line(text, &v.message, 1),
            message: v.to_string(),
        });
    }

    let defaults = RunSettings::default();
    let r = &file.run;
    let grid = GridSpec {
        dim: s.dim.unwrap_or(defaults.grid.dim),
        n: s.n.unwrap_or(defaults.grid.n),
    };
    if !(1..=2).contains(&grid.dim) || grid.n < 2 {
        diagnostics.push(Diagnostic {
            line: key_line(text, "dim", 1).or_else(|| key_line(text, "n", 1)),
            message: format!("grid needs dim 1 or 2 and n >= 2, got dim = {} and n = {}", grid.dim, grid.n),
        });
    }
    let run = RunSettings {
        matrix: r.matrix,
        scheme: scheme_of(r.scheme, defaults.scheme),
        measurement: measurement_of(r.measurement, defaults.measurement),
        record_stride: r.record_stride.unwrap_or(defaults.record_stride),
        t_end: r.t_end.unwrap_or(defaults.t_end),
        floor: r.floor.unwrap_or(defaults.floor),
        tolerance: r.tolerance.unwrap_or(defaults.tolerance),
        sensitivity: r.sensitivity.unwrap_or(defaults.sensitivity),
        grid,
    };
    let mut checks: Vec<(&str, bool, String)> = vec![
        ("record_stride", run.record_stride >= 1, "record_stride must be at least 1".into()),
        ("t_end", run.t_end.is_finite() && run.t_end >= 0.0, format!("t_end = {} must be >= 0", run.t_end)),
        ("floor", run.floor > 0.0, format!("floor = {} must be > 0", run.floor)),
        ("tolerance", run.tolerance >= 0.0, format!("tolerance = {} must be >= 0", run.tolerance)),
    ];
    let steps = run.t_end / base.dt;
    checks.push((
        "t_end",
        base.dt > 0.0 && (steps - steps.round()).abs() <= 1e-6,
        format!("t_end = {} is not a whole number of steps of dt = {}", run.t_end, base.dt),
    ));
    for (key, ok, message) in checks {
        if !ok {
            diagnostics.push(Diagnostic {
                line: key_line(text, key, 1),
                message,
            });
        }
    }

    let mut settings = Settings {
        spatial,
        run,
        scenarios: Vec::new(),
    };
    if let Some(kind) = settings.run.matrix {
        settings.scenarios = scenario_matrix(kind, &settings);
    }
    for (i, sc) in file.scenarios.iter().enumerate() {
        let start = scenario_line(text, i).unwrap_or(1);
        let scenario = Scenario::new(
            sc.name.clone(),
            sc.model,
            sc.theta0,
            sc.v0,
            sc.rho0.unwrap_or(sc.theta0),
            sc.k1.unwrap_or(base.k1),
            sc.k2.unwrap_or(base.k2),
            measurement_of(sc.measurement, settings.run.measurement),
            scheme_of(sc.scheme, settings.run.scheme),
            (sc.model == ModelKind::Pde).then_some(settings.run.grid),
        );
        for problem in scenario.problems(&settings) {
            diagnostics.push(Diagnostic {
                line: message_line(text, &problem, start).or(Some(start)),
                message: format!("scenario {}: {problem}", i + 1),
            });
        }
        settings.scenarios.push(scenario);
    }

    if diagnostics.is_empty() {
        Ok(settings)
    } else {
        Err(invalid(diagnostics))
    }
}

pub fn load_config(path: &Path) -> Result<Settings, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

fn scheme_name(s: Scheme) -> SchemeName {
    match s {
        Scheme::Euler => SchemeName::Euler,
        Scheme::Rk4 => SchemeName::Rk4,
    }
}

fn measurement_name(m: MeasurementMode) -> MeasurementName {
    match m {
        MeasurementMode::Exact => MeasurementName::Exact,
        MeasurementMode::FiniteDifference => MeasurementName::FiniteDifference,
    }
}

/// Fully explicit file for `settings`; `scenarios` replaces the scenario list.
pub fn to_config_file(settings: &Settings, scenarios: &[Scenario]) -> ConfigFile {
    let p = settings.params();
    let sp = &settings.spatial;
    let r = &settings.run;
    ConfigFile {
        model: ModelSection {
            b1: Some(p.b1),
            b2: Some(p.b2),
            b3: Some(p.b3),
            c1: Some(p.c1),
            c2: Some(p.c2),
            c3: Some(p.c3),
            d1: Some(p.d1),
            d2: Some(p.d2),
            d3: Some(p.d3),
            omega1: Some(p.omega1),
            omega2: Some(p.omega2),
            phase1: Some(p.phase1),
            phase2: Some(p.phase2),
            sigma: Some(p.sigma),
            epsilon: Some(p.epsilon),
            eta_star: Some(p.eta_star),
            eta: match p.eta_mode {
                EtaMode::Regularized => None,
                EtaMode::Constant(c) => Some(c),
            },
            v_max: Some(p.v_max),
            kappa: Some(p.kappa),
            k1: Some(p.k1),
            k2: Some(p.k2),
            p1: match p.p1 {
                BaseRate::Zero => None,
                BaseRate::Constant(c) => Some(c),
            },
            p2: Some(match p.p2 {
                VolumeWeight::Linear => VolumeWeightName::Linear,
                VolumeWeight::Quadratic => VolumeWeightName::Quadratic,
            }),
            dt: Some(p.dt),
            seed: Some(p.seed),
        },
        spatial: SpatialSection {
            dim: Some(r.grid.dim),
            n: Some(r.grid.n),
            diffusivity: Some(sp.diffusivity),
            anisotropy_scale: Some(sp.anisotropy_scale),
            control_center: Some(sp.control_center),
            q_centers: Some(sp.q_centers),
            unit_factors: Some(sp.unit_factors),
        },
        run: RunSection {
            matrix: None,
            scheme: Some(scheme_name(r.scheme)),
            measurement: Some(measurement_name(r.measurement)),
            record_stride: Some(r.record_stride),
            t_end: Some(r.t_end),
            floor: Some(r.floor),
            tolerance: Some(r.tolerance),
            sensitivity: Some(r.sensitivity),
        },
        scenarios: scenarios
            .iter()
            .map(|s| ScenarioSection {
                name: Some(s.name.clone()),
                model: s.model,
                theta0: s.theta0,
                v0: s.v0,
                rho0: Some(s.rho0),
                k1: Some(s.k1),
                k2: Some(s.k2),
                measurement: Some(measurement_name(s.measurement)),
                scheme: Some(scheme_name(s.scheme)),
            })
            .collect(),
    }
}

/// Serializes `settings` with every value spelled out.
pub fn write_config(settings: &Settings) -> String {
    toml::to_string(&to_config_file(settings, &settings.scenarios)).expect("configuration serializes")
}
