//! Re-verification of run directories.
//!
//! A directory passes when its CSV digest matches the summary, the
//! verdicts recomputed from `config.toml` and the CSV match the recorded
//! ones, and every recorded verdict passed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::config::load_config;
use crate::run::{csv_verdicts, final_errors, fmt_value, parse_summary, sha256_hex, Table};

/// Findings for one run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DirCheck {
    pub dir: PathBuf,
    pub problems: Vec<String>,
    /// Number of verdicts recomputed from the CSV.
    pub recomputed: usize,
}

impl DirCheck {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

fn check_inner(dir: &Path, problems: &mut Vec<String>) -> Result<usize> {
    let summary = parse_summary(
        &fs::read_to_string(dir.join("summary.txt")).with_context(|| format!("reading {}/summary.txt", dir.display()))?,
    );
    let settings = load_config(&dir.join("config.toml"))?;
    if settings.scenarios.len() != 1 {
        bail!("config.toml must hold exactly one scenario, found {}", settings.scenarios.len());
    }
    let scenario = &settings.scenarios[0];
    if summary.get("scenario") != Some(&scenario.name) {
        problems.push(format!("summary names {:?}, config names {:?}", summary.get("scenario"), scenario.name));
    }
    match summary.get("status").map(String::as_str) {
        Some("completed") => {}
        Some(other) => {
            problems.push(format!("run did not complete: {other}"));
            return Ok(0);
        }
        None => bail!("summary has no status"),
    }

    let bytes = fs::read(dir.join("trajectory.csv")).context("reading trajectory.csv")?;
    let digest = sha256_hex(&bytes);
    if summary.get("csv_sha256") != Some(&digest) {
        problems.push(format!(
            "trajectory.csv digest {digest} does not match summary {}",
            summary.get("csv_sha256").map_or("(missing)", String::as_str)
        ));
    }
    let table = Table::from_csv(&bytes)?;
    if summary.get("samples") != Some(&table.rows.len().to_string()) {
        problems.push(format!("CSV has {} rows, summary records {:?}", table.rows.len(), summary.get("samples")));
    }
    let (abs, rel) = final_errors(scenario.model, &table)?;
    for (key, value) in [("final_abs_err", abs), ("final_rel_err", rel)] {
        if summary.get(key) != Some(&fmt_value(value)) {
            problems.push(format!("{key}: CSV gives {}, summary records {:?}", fmt_value(value), summary.get(key)));
        }
    }

    let verdicts = csv_verdicts(&settings, scenario, &table)?;
    for v in &verdicts {
        let key = format!("verdict.{}", v.name);
        match summary.get(&key) {
            Some(recorded) if *recorded == v.render() => {}
            Some(recorded) => problems.push(format!("{key}: recomputed `{}`, recorded `{recorded}`", v.render())),
            None => problems.push(format!("{key}: missing from summary")),
        }
        if !v.passed {
            problems.push(format!("{key} failed: {}", v.render()));
        }
    }
    for (key, value) in summary.iter().filter(|(k, _)| k.starts_with("verdict.")) {
        if !value.starts_with("pass") {
            problems.push(format!("{key} recorded as {value}"));
        }
    }
    Ok(verdicts.len())
}

/// Checks one run directory. I/O and parse errors become problems.
pub fn check_dir(dir: &Path) -> DirCheck {
    let mut problems = Vec::new();
    let recomputed = match check_inner(dir, &mut problems) {
        Ok(n) => n,
        Err(e) => {
            problems.push(format!("{e:#}"));
            0
        }
    };
    DirCheck {
        dir: dir.to_path_buf(),
        problems,
        recomputed,
    }
}

/// Run directories under `root`: `root` itself when it holds a summary,
/// otherwise every descendant that does, in sorted order.
pub fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("summary.txt").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        bail!("{} is not a directory", root.display());
    }
    let mut entries = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    let mut out = Vec::new();
    for path in entries.into_iter().filter(|p| p.is_dir()) {
        out.extend(run_dirs(&path)?);
    }
    Ok(out)
}

/// Checks every run directory under `root`.
pub fn check_tree(root: &Path) -> Result<Vec<DirCheck>> {
    let dirs = run_dirs(root)?;
    if dirs.is_empty() {
        bail!("no run directories under {}", root.display());
    }
    Ok(dirs.iter().map(|d| check_dir(d)).collect())
}
