//! Scenario definitions and the reference scenario matrices.

use anthracnose_core::{MeasurementMode, Scheme};
use serde::{Deserialize, Serialize};

use crate::config::Settings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ode,
    Pde,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    PaperOde,
    PaperPde,
    Custom,
}

impl MatrixKind {
    pub fn label(self) -> &'static str {
        match self {
            MatrixKind::PaperOde => "paper_ode",
            MatrixKind::PaperPde => "paper_pde",
            MatrixKind::Custom => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
}

/// One run: initial data, gains and numerics.
///
/// The observer always starts from `θ̂(0) = 0` and `v̂(0) = v(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelKind,
    pub theta0: f64,
    pub v0: f64,
    pub rho0: f64,
    pub k1: f64,
    pub k2: f64,
    pub measurement: MeasurementMode,
    pub scheme: Scheme,
    pub grid: Option<GridSpec>,
}

/// Reference initial pairs `(θ(0), v(0))`.
pub const INITIAL_PAIRS: [(f64, f64); 4] = [(0.05, 0.05), (0.05, 0.5), (0.75, 0.05), (0.75, 0.5)];

/// Candidate rot proportions of the within-host sweep.
pub const RHO_GRID: [f64; 3] = [0.25, 0.5, 0.75];

/// Gain pairs `(k1, k2)`.
pub const GAIN_PAIRS: [(f64, f64); 4] = [(0.0, 0.0), (1e3, 0.0), (0.0, 1e3), (1e3, 1e3)];

fn slug(x: f64) -> String {
    format!("{x}")
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: Option<String>,
        model: ModelKind,
        theta0: f64,
        v0: f64,
        rho0: f64,
        k1: f64,
        k2: f64,
        measurement: MeasurementMode,
        scheme: Scheme,
        grid: Option<GridSpec>,
    ) -> Self {
        let name = name.unwrap_or_else(|| {
            let model = match model {
                ModelKind::Ode => "ode",
                ModelKind::Pde => "pde",
            };
            format!(
                "{model}_theta{}_v{}_rho{}_k1-{}_k2-{}",
                slug(theta0),
                slug(v0),
                slug(rho0),
                slug(k1),
                slug(k2)
            )
        });
        Self {
            name,
            model,
            theta0,
            v0,
            rho0,
            k1,
            k2,
            measurement,
            scheme,
            grid,
        }
    }

    /// Violated scenario invariants, as messages naming the offending keys.
    pub fn problems(&self, settings: &Settings) -> Vec<String> {
        let mut out = Vec::new();
        let v_max = settings.params().v_max;
        if !(0.0..=1.0).contains(&self.theta0) {
            out.push(format!("theta0 = {} must lie in [0, 1]", self.theta0));
        }
        if !(0.0..=v_max).contains(&self.v0) {
            out.push(format!("v0 = {} must lie in [0, v_max]", self.v0));
        }
        if !(0.0..=1.0).contains(&self.rho0) || self.rho0 > self.theta0 {
            out.push(format!("rho0 = {} must lie in [0, theta0 = {}]", self.rho0, self.theta0));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            out.push(format!("name {:?} is not usable as a directory name", self.name));
        }
        let p = settings.scenario_params(self);
        for v in p.validate().errors() {
            out.push(v.to_string());
        }
        out
    }
}

/// Admissible `ρ(0)` values for `θ(0)`, falling back to `θ(0)` itself.
pub fn admissible_rho(theta0: f64) -> Vec<f64> {
    let rho: Vec<f64> = RHO_GRID.iter().copied().filter(|&r| r <= theta0).collect();
    if rho.is_empty() {
        vec![theta0]
    } else {
        rho
    }
}

/// Reference scenario lists.
///
/// `paper_ode` crosses the initial pairs with every admissible `ρ(0)` and
/// the four gain pairs; `paper_pde` uses `ρ(0) = θ(0)` on the configured
/// grid. `custom` is empty: its scenarios come from the configuration.
pub fn scenario_matrix(kind: MatrixKind, settings: &Settings) -> Vec<Scenario> {
    let run = &settings.run;
    let mut out = Vec::new();
    match kind {
        MatrixKind::PaperOde => {
            for &(theta0, v0) in &INITIAL_PAIRS {
                for rho0 in admissible_rho(theta0) {
                    for &(k1, k2) in &GAIN_PAIRS {
                        out.push(Scenario::new(
                            None,
                            ModelKind::Ode,
                            theta0,
                            v0,
                            rho0,
                            k1,
                            k2,
                            run.measurement,
                            run.scheme,
                            None,
                        ));
                    }
                }
            }
        }
        MatrixKind::PaperPde => {
            for &(theta0, v0) in &INITIAL_PAIRS {
                for &(k1, k2) in &GAIN_PAIRS {
                    out.push(Scenario::new(
                        None,
                        ModelKind::Pde,
                        theta0,
                        v0,
                        theta0,
                        k1,
                        k2,
                        run.measurement,
                        run.scheme,
                        Some(run.grid),
                    ));
                }
            }
        }
        MatrixKind::Custom => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_sizes() {
        let s = Settings::default();
        assert_eq!(scenario_matrix(MatrixKind::PaperPde, &s).len(), 16);
        assert_eq!(scenario_matrix(MatrixKind::PaperOde, &s).len(), 32);
        assert!(scenario_matrix(MatrixKind::Custom, &s).is_empty());
    }

    #[test]
    fn rot_never_exceeds_inhibition() {
        let s = Settings::default();
        for kind in [MatrixKind::PaperOde, MatrixKind::PaperPde] {
            for sc in scenario_matrix(kind, &s) {
                assert!(sc.rho0 <= sc.theta0);
                assert!(sc.problems(&s).is_empty(), "{:?}", sc.problems(&s));
            }
        }
    }

    #[test]
    fn names_are_unique() {
        let s = Settings::default();
        let mut names: Vec<String> = scenario_matrix(MatrixKind::PaperOde, &s).into_iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 32);
    }
}
