//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::check::{check_tree, run_dirs};
use crate::config::{load_config, Settings};
use crate::plot::{emit_plot, PlotKind};
use crate::run::{output_root, run_batch, RunRecord, RunStatus, Table};
use crate::scenario::{scenario_matrix, MatrixKind};

#[derive(Debug, Parser)]
#[command(name = "anthracnose", version, about = "Anthracnose infection model and rot observer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a configuration file.
    Validate { config: PathBuf },
    /// Run the scenarios of a configuration file.
    Run {
        config: PathBuf,
        /// Output root; overrides ANTHRACNOSE_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a reference scenario matrix.
    Sweep {
        matrix: SweepKind,
        /// Base configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output root; overrides ANTHRACNOSE_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-verify a run directory or a tree of them.
    Check { dir: PathBuf },
    /// Regenerate the plots of a run directory or a tree of them.
    Plot { dir: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    PaperOde,
    PaperPde,
}

impl From<SweepKind> for MatrixKind {
    fn from(k: SweepKind) -> Self {
        match k {
            SweepKind::PaperOde => MatrixKind::PaperOde,
            SweepKind::PaperPde => MatrixKind::PaperPde,
        }
    }
}

fn report(records: &[RunRecord]) -> bool {
    let mut ok = true;
    for r in records {
        match &r.status {
            RunStatus::Completed if r.passed() => println!("ok      {}", r.scenario.name),
            RunStatus::Completed => {
                ok = false;
                let failed: Vec<&str> = r.verdicts.iter().filter(|v| !v.passed).map(|v| v.name.as_str()).collect();
                println!("FAILED  {} ({})", r.scenario.name, failed.join(", "));
            }
            RunStatus::Failed(message) => {
                ok = false;
                println!("ERROR   {}: {message}", r.scenario.name);
            }
        }
    }
    let passed = records.iter().filter(|r| r.passed()).count();
    println!("{passed}/{} scenarios passed", records.len());
    ok
}

fn settings_from(path: Option<&Path>) -> Result<Settings> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => Settings::default(),
    })
}

fn config_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned())
}

fn plot_dir(dir: &Path) -> Result<()> {
    let settings = load_config(&dir.join("config.toml"))?;
    let scenario = settings.scenarios.first().context("config.toml holds no scenario")?;
    let table = Table::from_csv(&fs::read(dir.join("trajectory.csv")).context("reading trajectory.csv")?)?;
    for kind in [PlotKind::Estimate, PlotKind::Error] {
        emit_plot(&table, scenario.model, kind, &scenario.name, &dir.join(kind.file_name()))?;
    }
    Ok(())
}

/// Executes a parsed command; `Ok(false)` means a run or check failed.
pub fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate { config } => {
            let settings = load_config(&config)?;
            let warnings = settings.params().validate();
            for v in &warnings.violations {
                println!("{v}");
            }
            println!("{}: valid ({} scenarios)", config.display(), settings.scenarios.len());
            Ok(true)
        }
        Command::Run { config, out } => {
            let settings = load_config(&config)?;
            if settings.scenarios.is_empty() {
                bail!("{} defines no scenarios", config.display());
            }
            let root = output_root(out).join(config_stem(&config));
            let records = run_batch(&settings, &settings.scenarios, &root)?;
            println!("wrote {}", root.display());
            Ok(report(&records))
        }
        Command::Sweep { matrix, config, out } => {
            let settings = settings_from(config.as_deref())?;
            let kind = MatrixKind::from(matrix);
            let scenarios = scenario_matrix(kind, &settings);
            let root = output_root(out).join(kind.label());
            let records = run_batch(&settings, &scenarios, &root)?;
            println!("wrote {}", root.display());
            Ok(report(&records))
        }
        Command::Check { dir } => {
            let checks = check_tree(&dir)?;
            let mut ok = true;
            for c in &checks {
                if c.ok() {
                    println!("ok      {} ({} verdicts recomputed)", c.dir.display(), c.recomputed);
                } else {
                    ok = false;
                    println!("FAILED  {}", c.dir.display());
                    for p in &c.problems {
                        println!("        {p}");
                    }
                }
            }
            Ok(ok)
        }
        Command::Plot { dir } => {
            for d in run_dirs(&dir)? {
                plot_dir(&d).with_context(|| format!("plotting {}", d.display()))?;
                println!("plotted {}", d.display());
            }
            Ok(true)
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
