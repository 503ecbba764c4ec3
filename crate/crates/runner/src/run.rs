//! Scenario execution, run records and on-disk artifacts.
//!
//! Each run directory holds:
//!
//! * `config.toml`, a fully explicit configuration with the single scenario,
//! * `trajectory.csv`, the recorded series,
//! * `summary.txt`, the run record as `key = value` lines,
//! * `estimate.svg` and `error.svg`.
//!
//! Verdicts marked `source=csv` are computed from the CSV as written, so
//! `check` can recompute them from the directory alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anthracnose_core::metrics::{envelope_series, max_abs_deviation};
use anthracnose_core::ode::{ConditionAccumulator, SiteSample};
use anthracnose_core::pde::{accumulate_snapshot, paired_sensitivity};
use anthracnose_core::{
    l2_envelope, relative_abs_error, run_observer, run_spatial_observer, ConditionReport, Field, Grid,
    MeasurementMode, ModelState, ObserverState, OdeTrajectory, Parameters, SimulationOptions, SpatialModel,
    SpatialSystemState,
};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{to_config_file, Settings};
use crate::plot::{emit_plot, PlotKind};
use crate::scenario::{ModelKind, Scenario};

pub const ODE_COLUMNS: [&str; 8] = ["t", "theta", "v", "rho", "theta_hat", "v_hat", "abs_err", "rel_err"];

const PDE_QUANTITIES: [&str; 4] = ["theta", "theta_hat", "abs_err", "rel_err"];

/// Largest accepted excursion of a recorded or pre-clamp state outside its box.
pub const BOX_TOLERANCE: f64 = 1e-6;

/// Largest accepted PDE/ODE deviation of a spatially constant run.
pub const REDUCTION_TOLERANCE: f64 = 1e-6;

/// Perturbation of `θ(0)` used by the paired sensitivity runs.
pub const SENSITIVITY_DELTA: f64 = 1e-4;

pub fn pde_columns() -> Vec<String> {
    let mut out = vec!["t".to_string()];
    for q in PDE_QUANTITIES {
        for stat in ["min", "mean", "max"] {
            out.push(format!("{q}_{stat}"));
        }
    }
    out
}

pub fn columns(model: ModelKind) -> Vec<String> {
    match model {
        ModelKind::Ode => ODE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        ModelKind::Pde => pde_columns(),
    }
}

/// Value format of every CSV cell: 9 significant digits.
pub fn fmt_value(x: f64) -> String {
    format!("{x:.8e}")
}

/// Numeric table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|&x| fmt_value(x))).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (i, record) in r.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|cell| cell.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("row {} is not numeric", i + 1))?;
            if row.len() != header.len() {
                bail!("row {} has {} cells, expected {}", i + 1, row.len(), header.len());
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    /// The table as it reads back from its CSV form.
    pub fn rounded(&self) -> Self {
        Self::from_csv(&self.to_csv()).expect("own CSV parses")
    }
}

/// Where a verdict can be recomputed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerdictSource {
    Csv,
    Run,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub source: VerdictSource,
}

impl Verdict {
    fn at_most(name: &str, value: f64, limit: f64, source: VerdictSource) -> Self {
        Self {
            name: name.to_string(),
            passed: value <= limit,
            value,
            limit,
            source,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{} value={} limit={} source={}",
            if self.passed { "pass" } else { "fail" },
            fmt_value(self.value),
            fmt_value(self.limit),
            match self.source {
                VerdictSource::Csv => "csv",
                VerdictSource::Run => "run",
            }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed(String),
}

/// Outcome of one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub status: RunStatus,
    pub samples: usize,
    /// Last recorded `|θ - θ̂|` (spatial mean for spatial runs).
    pub final_abs_err: f64,
    /// Last recorded relative error (spatial mean for spatial runs).
    pub final_rel_err: f64,
    /// Largest pre-clamp excursion per component `θ, v, ρ, θ̂, v̂`.
    pub overshoot: [f64; 5],
    pub conditions: Option<ConditionReport<f64>>,
    pub verdicts: Vec<Verdict>,
    pub wall_ms: f64,
    pub csv_sha256: String,
}

impl RunRecord {
    pub fn failed(scenario: Scenario, message: String) -> Self {
        Self {
            scenario,
            status: RunStatus::Failed(message),
            samples: 0,
            final_abs_err: f64::NAN,
            final_rel_err: f64::NAN,
            overshoot: [0.0; 5],
            conditions: None,
            verdicts: Vec::new(),
            wall_ms: 0.0,
            csv_sha256: String::new(),
        }
    }

    pub fn max_overshoot(&self) -> f64 {
        self.overshoot.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.status == RunStatus::Completed && self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn simulation_options(settings: &Settings, scenario: &Scenario) -> SimulationOptions<f64> {
    SimulationOptions {
        t0: 0.0,
        t1: settings.run.t_end,
        dt: settings.params().dt,
        scheme: scenario.scheme,
        record_stride: settings.run.record_stride,
        clamp: true,
        overshoot_limit: Some(BOX_TOLERANCE),
    }
}

fn initial(scenario: &Scenario) -> (ModelState<f64>, ObserverState<f64>) {
    (
        ModelState::new(scenario.theta0, scenario.v0, scenario.rho0),
        ObserverState::new(0.0, scenario.v0),
    )
}

/// Within-host truth and observer for `scenario`.
pub fn ode_trajectory(settings: &Settings, scenario: &Scenario) -> Result<OdeTrajectory<f64>> {
    let (state, observer) = initial(scenario);
    let p = settings.scenario_params(scenario);
    Ok(run_observer(&p, state, observer, scenario.measurement, &simulation_options(settings, scenario))?)
}

fn ode_sensitivity(settings: &Settings, scenario: &Scenario) -> Result<Vec<f64>> {
    let shifted = |sign: f64| {
        let mut s = scenario.clone();
        s.theta0 = (s.theta0 + sign * SENSITIVITY_DELTA).clamp(0.0, 1.0);
        ode_trajectory(settings, &s)
    };
    let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);
    Ok(plus
        .samples
        .iter()
        .zip(&minus.samples)
        .map(|(a, b)| {
            let dtheta = a.state.theta - b.state.theta;
            if dtheta.abs() > 1e-12 {
                (a.state.v - b.state.v) / dtheta
            } else {
                f64::NAN
            }
        })
        .collect())
}

fn ode_conditions(
    p: &Parameters,
    traj: &OdeTrajectory<f64>,
    sensitivity: Option<&[f64]>,
) -> Result<ConditionReport<f64>> {
    let mut acc = ConditionAccumulator::new();
    for (i, s) in traj.samples.iter().enumerate() {
        acc.begin_time(s.t);
        acc.push_site(&SiteSample {
            forcing: p.forcing_at(s.t)?,
            state: s.state,
            observer: s.observer,
            measurement: s.measurement,
            k1: p.k1,
            k2: p.k2,
            dv_dtheta: sensitivity.map(|d| d[i]),
        });
    }
    Ok(acc.finish())
}

struct Outcome {
    table: Table,
    overshoot: [f64; 5],
    conditions: ConditionReport<f64>,
    run_verdicts: Vec<Verdict>,
}

fn execute_ode(settings: &Settings, scenario: &Scenario) -> Result<Outcome> {
    let p = settings.scenario_params(scenario);
    let traj = ode_trajectory(settings, scenario)?;
    let sensitivity = if settings.run.sensitivity {
        Some(ode_sensitivity(settings, scenario)?)
    } else {
        None
    };
    let conditions = ode_conditions(&p, &traj, sensitivity.as_deref())?;
    let rows = traj
        .samples
        .iter()
        .map(|s| {
            let (theta, theta_hat) = (s.state.theta, s.observer.theta_hat);
            vec![
                s.t,
                theta,
                s.state.v,
                s.state.rho,
                theta_hat,
                s.observer.v_hat,
                (theta - theta_hat).abs(),
                relative_abs_error(theta, theta_hat, settings.run.floor),
            ]
        })
        .collect();
    let mut overshoot = [0.0; 5];
    overshoot.copy_from_slice(&traj.raw.stats.overshoot);
    Ok(Outcome {
        table: Table {
            header: columns(ModelKind::Ode),
            rows,
        },
        overshoot,
        conditions,
        run_verdicts: vec![Verdict::at_most(
            "overshoot",
            traj.raw.stats.max_overshoot(),
            BOX_TOLERANCE,
            VerdictSource::Run,
        )],
    })
}

fn execute_pde(settings: &Settings, scenario: &Scenario) -> Result<Outcome> {
    let spec = scenario.grid.unwrap_or(settings.run.grid);
    let grid = Grid::new(spec.dim, spec.n)?;
    let sp = settings.scenario_spatial(scenario);
    let model = SpatialModel::new(&sp, grid)?;
    let (state, observer) = initial(scenario);
    let init = SpatialSystemState::uniform(&grid, state, observer);
    let opts = simulation_options(settings, scenario);
    let sensitivity = if settings.run.sensitivity {
        Some(paired_sensitivity(&model, &init, scenario.measurement, &opts, SENSITIVITY_DELTA)?)
    } else {
        None
    };
    let floor = settings.run.floor;
    let mut acc = ConditionAccumulator::new();
    let mut rows = Vec::new();
    let mut l2 = Vec::new();
    let stats = run_spatial_observer(model.clone(), &init, scenario.measurement, &opts, |snap| {
        let i = rows.len();
        accumulate_snapshot(&mut acc, &model, snap, sensitivity.as_ref().map(|f: &Vec<Field<f64>>| &f[i]))?;
        let summary = snap.summarize(&grid, floor)?;
        let mut row = vec![snap.t];
        for a in [summary.theta, summary.theta_hat, summary.abs_err, summary.rel_err] {
            row.extend([a.min, a.mean, a.max]);
        }
        rows.push(row);
        l2.push((snap.t, summary.l2_error_sq));
        Ok(())
    })?;
    let conditions = acc.finish();

    let cells = grid.cells();
    let mut overshoot = [0.0; 5];
    for (i, x) in stats.overshoot.iter().enumerate() {
        overshoot[i / cells] = f64::max(overshoot[i / cells], *x);
    }
    let mut run_verdicts = vec![Verdict::at_most("overshoot", stats.max_overshoot(), BOX_TOLERANCE, VerdictSource::Run)];
    let uniform_gains = model.k1.iter().chain(&model.k2).all(|&k| k == 0.0);
    if uniform_gains && scenario.measurement == MeasurementMode::Exact {
        let inf_alpha = conditions.inf_alpha.max(0.0);
        let e0 = l2[0].1.sqrt();
        let worst = l2
            .iter()
            .map(|&(t, e2)| {
                let bound = l2_envelope(t - l2[0].0, inf_alpha, e0);
                if bound > 0.0 {
                    e2 / bound
                } else if e2 > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        run_verdicts.push(Verdict::at_most(
            "l2_envelope",
            worst,
            1.0 + settings.run.tolerance,
            VerdictSource::Run,
        ));
    }
    Ok(Outcome {
        table: Table {
            header: columns(ModelKind::Pde),
            rows,
        },
        overshoot,
        conditions,
        run_verdicts,
    })
}

/// Largest excursion of the recorded values outside `[lo, hi]`.
fn box_excess(values: &[f64], lo: f64, hi: f64) -> f64 {
    values.iter().map(|&x| (lo - x).max(x - hi).max(0.0)).fold(0.0, f64::max)
}

fn column(table: &Table, name: &str) -> Result<Vec<f64>> {
    table.column(name).ok_or_else(|| anyhow!("missing column {name}"))
}

/// Verdicts that depend only on the configuration and the CSV table.
pub fn csv_verdicts(settings: &Settings, scenario: &Scenario, table: &Table) -> Result<Vec<Verdict>> {
    let expected = columns(scenario.model);
    if table.header != expected {
        bail!("CSV header {:?} does not match {:?}", table.header, expected);
    }
    if table.rows.is_empty() {
        bail!("CSV has no rows");
    }
    let p = settings.scenario_params(scenario);
    let floor = settings.run.floor;
    let tol = settings.run.tolerance;
    let times = column(table, "t")?;
    let mut out = Vec::new();
    match scenario.model {
        ModelKind::Ode => {
            let theta = column(table, "theta")?;
            let theta_hat = column(table, "theta_hat")?;
            let excess = [
                box_excess(&theta, 0.0, 1.0),
                box_excess(&column(table, "v")?, 0.0, p.v_max),
                box_excess(&column(table, "rho")?, 0.0, 1.0),
                box_excess(&theta_hat, 0.0, 1.0),
                box_excess(&column(table, "v_hat")?, 0.0, p.v_max),
            ];
            out.push(Verdict::at_most("box", excess.iter().copied().fold(0.0, f64::max), BOX_TOLERANCE, VerdictSource::Csv));

            let abs = column(table, "abs_err")?;
            let rel = column(table, "rel_err")?;
            let mut mismatch: f64 = 0.0;
            for i in 0..theta.len() {
                let a = (theta[i] - theta_hat[i]).abs();
                mismatch = mismatch.max((abs[i] - a).abs() / a.max(1e-3));
                let r = relative_abs_error(theta[i], theta_hat[i], floor);
                mismatch = mismatch.max((rel[i] - r).abs() / r.max(1.0));
            }
            out.push(Verdict::at_most("error_columns", mismatch, 1e-5, VerdictSource::Csv));

            let errors: Vec<f64> = theta.iter().zip(&theta_hat).map(|(a, b)| a - b).collect();
            let e0 = errors[0];
            if e0 != 0.0 {
                let alpha = |s: f64| p.alpha(s);
                let w = |s: f64| p.w(s).unwrap_or(f64::INFINITY);
                let decay: Vec<f64> = envelope_series(&times, alpha, w, 1.0);
                if p.k1 == 0.0 && p.k2 == 0.0 {
                    let env: Vec<f64> = decay.iter().map(|d| d * e0).collect();
                    let (worst, _) = max_abs_deviation(&errors, &env).unwrap_or((0.0, 0));
                    out.push(Verdict::at_most("exact_error_law", worst / e0.abs(), 1e-3, VerdictSource::Csv));
                }
                if p.k1 == 0.0 && scenario.measurement == MeasurementMode::Exact {
                    let worst = errors
                        .iter()
                        .zip(&decay)
                        .map(|(e, d)| e * e / (e0 * e0 * d))
                        .fold(0.0, f64::max);
                    out.push(Verdict::at_most("rot_gain_envelope", worst, 1.0 + tol, VerdictSource::Csv));
                }
            }
        }
        ModelKind::Pde => {
            let mut excess: f64 = 0.0;
            let mut disorder: f64 = 0.0;
            for q in PDE_QUANTITIES {
                let lo = column(table, &format!("{q}_min"))?;
                let mean = column(table, &format!("{q}_mean"))?;
                let hi = column(table, &format!("{q}_max"))?;
                for i in 0..lo.len() {
                    disorder = disorder.max(lo[i] - mean[i]).max(mean[i] - hi[i]);
                }
                if q.starts_with("theta") {
                    excess = excess.max(box_excess(&lo, 0.0, 1.0)).max(box_excess(&hi, 0.0, 1.0));
                }
            }
            out.push(Verdict::at_most("box", excess, BOX_TOLERANCE, VerdictSource::Csv));
            out.push(Verdict::at_most("aggregate_order", disorder.max(0.0), 1e-8, VerdictSource::Csv));
            if settings.spatial.unit_factors {
                let reference = ode_trajectory(settings, scenario)?;
                if reference.samples.len() != table.rows.len() {
                    bail!("reference run has {} samples, CSV has {}", reference.samples.len(), table.rows.len());
                }
                let mut worst: f64 = 0.0;
                for (name, pick) in [("theta", 0usize), ("theta_hat", 1)] {
                    let want: Vec<f64> = reference
                        .samples
                        .iter()
                        .map(|s| if pick == 0 { s.state.theta } else { s.observer.theta_hat })
                        .collect();
                    for stat in ["min", "max"] {
                        let got = column(table, &format!("{name}_{stat}"))?;
                        worst = worst.max(max_abs_deviation(&got, &want).map_or(0.0, |d| d.0));
                    }
                }
                out.push(Verdict::at_most("reduction", worst, REDUCTION_TOLERANCE, VerdictSource::Csv));
            }
        }
    }
    Ok(out)
}

/// Final absolute and relative errors read from the table.
pub fn final_errors(model: ModelKind, table: &Table) -> Result<(f64, f64)> {
    let (abs, rel) = match model {
        ModelKind::Ode => ("abs_err", "rel_err"),
        ModelKind::Pde => ("abs_err_mean", "rel_err_mean"),
    };
    let last = |name| column(table, name)?.last().copied().ok_or_else(|| anyhow!("empty column {name}"));
    Ok((last(abs)?, last(rel)?))
}

/// Runs a scenario; returns its record and its (rounded) table.
pub fn execute(settings: &Settings, scenario: &Scenario) -> Result<(RunRecord, Table)> {
    let start = Instant::now();
    let outcome = match scenario.model {
        ModelKind::Ode => execute_ode(settings, scenario)?,
        ModelKind::Pde => execute_pde(settings, scenario)?,
    };
    let table = outcome.table.rounded();
    let mut verdicts = csv_verdicts(settings, scenario, &table)?;
    verdicts.extend(outcome.run_verdicts);
    let (final_abs_err, final_rel_err) = final_errors(scenario.model, &table)?;
    let record = RunRecord {
        scenario: scenario.clone(),
        status: RunStatus::Completed,
        samples: table.rows.len(),
        final_abs_err,
        final_rel_err,
        overshoot: outcome.overshoot,
        conditions: Some(outcome.conditions),
        verdicts,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        csv_sha256: sha256_hex(&table.to_csv()),
    };
    Ok((record, table))
}

fn fmt_option(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), fmt_value)
}

/// `key = value` rendering of a record.
pub fn render_summary(record: &RunRecord) -> String {
    let s = &record.scenario;
    let mut lines: Vec<(String, String)> = vec![
        ("scenario".into(), s.name.clone()),
        ("model".into(), format!("{:?}", s.model).to_lowercase()),
        ("theta0".into(), fmt_value(s.theta0)),
        ("v0".into(), fmt_value(s.v0)),
        ("rho0".into(), fmt_value(s.rho0)),
        ("k1".into(), fmt_value(s.k1)),
        ("k2".into(), fmt_value(s.k2)),
        ("measurement".into(), format!("{:?}", s.measurement)),
        ("scheme".into(), format!("{:?}", s.scheme)),
    ];
    if let Some(g) = s.grid {
        lines.push(("grid".into(), format!("dim={} n={}", g.dim, g.n)));
    }
    match &record.status {
        RunStatus::Completed => lines.push(("status".into(), "completed".into())),
        RunStatus::Failed(message) => lines.push(("status".into(), format!("failed: {}", message.replace('\n', " ")))),
    }
    lines.extend([
        ("samples".into(), record.samples.to_string()),
        ("final_abs_err".into(), fmt_value(record.final_abs_err)),
        ("final_rel_err".into(), fmt_value(record.final_rel_err)),
        ("max_overshoot".into(), fmt_value(record.max_overshoot())),
    ]);
    for (name, x) in anthracnose_core::ode::layout::NAMES.iter().zip(record.overshoot) {
        lines.push((format!("overshoot.{name}"), fmt_value(x)));
    }
    lines.push(("csv_sha256".into(), record.csv_sha256.clone()));
    lines.push(("wall_ms".into(), format!("{:.3}", record.wall_ms)));
    for v in &record.verdicts {
        lines.push((format!("verdict.{}", v.name), v.render()));
    }
    if let Some(c) = &record.conditions {
        let zeros = c.alpha_zero_times.iter().map(|t| fmt_value(*t)).collect::<Vec<_>>().join(",");
        lines.extend([
            ("condition.inf_alpha".into(), fmt_value(c.inf_alpha)),
            ("condition.argmin_alpha".into(), fmt_value(c.argmin_alpha)),
            ("condition.alpha_zero_times".into(), if zeros.is_empty() { "none".into() } else { zeros }),
            ("condition.coercivity".into(), fmt_option(c.coercivity)),
            ("condition.coercivity_samples".into(), c.coercivity_samples.to_string()),
            ("condition.stability_k1".into(), fmt_option(c.stability_k1)),
            ("condition.stability_k1k2".into(), fmt_option(c.stability_k1k2)),
            ("condition.sensitivity_k1".into(), fmt_option(c.sensitivity_k1)),
            ("condition.sensitivity_k1k2".into(), fmt_option(c.sensitivity_k1k2)),
            ("condition.singular_samples".into(), c.singular_samples.to_string()),
            ("condition.dominance_margin".into(), fmt_option(c.dominance_margin)),
        ]);
    }
    lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_summary(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Writes the artifacts of one run into `dir`.
pub fn write_run(dir: &Path, settings: &Settings, record: &RunRecord, table: Option<&Table>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let config = toml::to_string(&to_config_file(settings, std::slice::from_ref(&record.scenario)))?;
    fs::write(dir.join("config.toml"), config)?;
    if let Some(table) = table {
        fs::write(dir.join("trajectory.csv"), table.to_csv())?;
        for kind in [PlotKind::Estimate, PlotKind::Error] {
            emit_plot(table, record.scenario.model, kind, &record.scenario.name, &dir.join(kind.file_name()))?;
        }
    }
    fs::write(dir.join("summary.txt"), render_summary(record))?;
    Ok(())
}

/// Executes `scenario` and writes its directory under `root`. Failures
/// are recorded rather than propagated.
pub fn run_scenario(settings: &Settings, scenario: &Scenario, root: &Path) -> Result<RunRecord> {
    let dir = root.join(&scenario.name);
    match execute(settings, scenario) {
        Ok((record, table)) => {
            write_run(&dir, settings, &record, Some(&table))?;
            Ok(record)
        }
        Err(e) => {
            let record = RunRecord::failed(scenario.clone(), format!("{e:#}"));
            write_run(&dir, settings, &record, None)?;
            Ok(record)
        }
    }
}

/// Runs every scenario in parallel and writes an `index.txt` under `root`.
pub fn run_batch(settings: &Settings, scenarios: &[Scenario], root: &Path) -> Result<Vec<RunRecord>> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let records = scenarios
        .par_iter()
        .map(|s| run_scenario(settings, s, root))
        .collect::<Result<Vec<_>>>()?;
    let index: String = records
        .iter()
        .map(|r| {
            let status = match &r.status {
                RunStatus::Completed if r.passed() => "pass",
                RunStatus::Completed => "fail",
                RunStatus::Failed(_) => "error",
            };
            format!("{} {} final_rel_err={}\n", r.scenario.name, status, fmt_value(r.final_rel_err))
        })
        .collect();
    fs::write(root.join("index.txt"), index)?;
    Ok(records)
}

/// Default output root: `ANTHRACNOSE_OUT` when set, `runs` otherwise.
pub fn output_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("ANTHRACNOSE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use anthracnose_core::Scheme;

    fn ode_scenario(k1: f64, k2: f64) -> Scenario {
        Scenario::new(None, ModelKind::Ode, 0.75, 0.5, 0.25, k1, k2, MeasurementMode::Exact, Scheme::Euler, None)
    }

    #[test]
    fn csv_round_trip_is_stable() {
        let t = Table {
            header: vec!["t".into(), "x".into()],
            rows: vec![vec![0.0, 1.0 / 3.0], vec![0.1, -2.5e-7]],
        };
        let once = t.rounded();
        assert_eq!(once.rounded(), once);
        assert_eq!(once.to_csv(), t.to_csv());
        assert!((once.rows[0][1] - 1.0 / 3.0).abs() < 1e-9);
        assert!(Table::from_csv(b"t,x\n0,abc\n").is_err());
        assert!(Table::from_csv(b"t,x\n0\n").is_err());
    }

    #[test]
    fn pde_header_lists_aggregates() {
        let h = pde_columns();
        assert_eq!(h.len(), 13);
        assert_eq!(h[1], "theta_min");
        assert_eq!(h[12], "rel_err_max");
    }

    #[test]
    fn box_excess_measures_worst_excursion() {
        assert_eq!(box_excess(&[0.0, 0.5, 1.0], 0.0, 1.0), 0.0);
        assert_eq!(box_excess(&[-0.25, 1.5], 0.0, 1.0), 0.5);
    }

    #[test]
    fn natural_run_carries_error_law_verdict() {
        let settings = Settings {
            run: crate::config::RunSettings {
                t_end: 0.2,
                ..Default::default()
            },
            ..Settings::default()
        };
        let (record, table) = execute(&settings, &ode_scenario(0.0, 0.0)).unwrap();
        assert!(record.passed(), "{:?}", record.verdicts);
        assert_eq!(table.rows.len(), 201);
        let names: Vec<&str> = record.verdicts.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["box", "error_columns", "exact_error_law", "rot_gain_envelope", "overshoot"]);

        let mut edited = table.clone();
        edited.rows[100][4] += 0.1;
        let verdicts = csv_verdicts(&settings, &record.scenario, &edited).unwrap();
        assert!(verdicts.iter().any(|v| !v.passed));
    }

    #[test]
    fn gains_drop_inapplicable_verdicts() {
        let settings = Settings {
            run: crate::config::RunSettings {
                t_end: 0.05,
                ..Default::default()
            },
            ..Settings::default()
        };
        let (record, _) = execute(&settings, &ode_scenario(1e3, 1e3)).unwrap();
        assert!(record.verdict("exact_error_law").is_none());
        assert!(record.verdict("rot_gain_envelope").is_none());
        assert!(record.passed());
    }

    #[test]
    fn summary_round_trips_through_parser() {
        let settings = Settings {
            run: crate::config::RunSettings {
                t_end: 0.01,
                ..Default::default()
            },
            ..Settings::default()
        };
        let (record, _) = execute(&settings, &ode_scenario(0.0, 1e3)).unwrap();
        let map = parse_summary(&render_summary(&record));
        assert_eq!(map["scenario"], record.scenario.name);
        assert_eq!(map["status"], "completed");
        assert_eq!(map["samples"], "11");
        assert_eq!(map["csv_sha256"], record.csv_sha256);
        assert_eq!(map["verdict.box"], record.verdict("box").unwrap().render());
    }

    #[test]
    fn failed_record_never_passes() {
        let r = RunRecord::failed(ode_scenario(0.0, 0.0), "boom".into());
        assert!(!r.passed());
        assert!(render_summary(&r).contains("status = failed: boom"));
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
