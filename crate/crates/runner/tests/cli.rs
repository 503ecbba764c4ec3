use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use anthracnose_runner::run::{Table, ODE_COLUMNS};

fn anthracnose(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anthracnose"))
        .args(args)
        .current_dir(dir)
        .env_remove("ANTHRACNOSE_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn count_class(svg: &str, element: &str, class: &str) -> usize {
    let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
    doc.descendants()
        .filter(|n| n.has_tag_name(element) && n.attribute("class") == Some(class))
        .count()
}

#[test]
fn defaults_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "empty.toml", "");
    let out = anthracnose(&["validate", &cfg], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gain_above_cap_is_rejected_with_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cap.toml", "[model]\n\nk1 = 10000.0\n");
    let out = anthracnose(&["validate", &cfg], tmp.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "typo.toml", "[run]\nrecord_strid = 5\n");
    let out = anthracnose(&["run", &cfg], tmp.path());
    assert!(!out.status.success());
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn zero_duration_run_records_initial_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "zero.toml",
        "[run]\nt_end = 0.0\n\n[[scenario]]\nname = \"z\"\nmodel = \"ode\"\ntheta0 = 0.5\nv0 = 0.25\n",
    );
    let out = anthracnose(&["run", &cfg, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let table = Table::from_csv(&fs::read(tmp.path().join("o/zero/z/trajectory.csv")).unwrap()).unwrap();
    assert_eq!(table.header, ODE_COLUMNS);
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0][..6], [0.0, 0.5, 0.25, 0.5, 0.0, 0.25]);
}

#[test]
fn output_root_follows_env_unless_flag_given() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "[run]\nt_end = 0.01\n\n[[scenario]]\nname = \"a\"\nmodel = \"ode\"\ntheta0 = 0.5\nv0 = 0.25\n",
    );
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_anthracnose"))
            .args(["run", &cfg])
            .args(extra)
            .current_dir(tmp.path())
            .env("ANTHRACNOSE_OUT", "from_env")
            .output()
            .unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(tmp.path().join("from_env/c/a/summary.txt").is_file());
    assert!(run(&["--out", "from_flag"]).status.success());
    assert!(tmp.path().join("from_flag/c/a/summary.txt").is_file());
}

#[test]
fn sweep_artifacts_check_and_detect_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let out = anthracnose(&["sweep", "paper-ode", "--out", "s"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let root = tmp.path().join("s/paper_ode");
    let dirs: Vec<_> = fs::read_dir(&root).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(dirs.len(), 32);
    assert_eq!(fs::read_to_string(root.join("index.txt")).unwrap().lines().count(), 32);

    let one = root.join("ode_theta0.75_v0.5_rho0.25_k1-0_k2-1000");
    for file in ["config.toml", "trajectory.csv", "summary.txt", "estimate.svg", "error.svg"] {
        assert!(one.join(file).is_file(), "{file}");
    }
    let estimate = fs::read_to_string(one.join("estimate.svg")).unwrap();
    assert_eq!(count_class(&estimate, "polyline", "series"), 2);
    let error = fs::read_to_string(one.join("error.svg")).unwrap();
    assert_eq!(count_class(&error, "polyline", "series"), 1);
    let table = Table::from_csv(&fs::read(one.join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 1001);

    assert!(anthracnose(&["check", "s"], tmp.path()).status.success());

    let before = estimate.clone();
    fs::remove_file(one.join("estimate.svg")).unwrap();
    assert!(anthracnose(&["plot", "s/paper_ode"], tmp.path()).status.success());
    assert_eq!(fs::read_to_string(one.join("estimate.svg")).unwrap(), before);

    let csv_path = one.join("trajectory.csv");
    let text = fs::read_to_string(&csv_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[500].split(',').map(str::to_string).collect();
    cells[4] = "1.00000000e-1".to_string();
    lines[500] = cells.join(",");
    fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
    let checked = anthracnose(&["check", "s"], tmp.path());
    assert!(!checked.status.success());
    let report = String::from_utf8_lossy(&checked.stdout);
    assert!(report.contains("digest"), "{report}");
}

#[test]
fn spatial_run_plots_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "p.toml",
        "[spatial]\nn = 8\n\n[run]\nt_end = 0.05\n\n[[scenario]]\nname = \"p\"\nmodel = \"pde\"\ntheta0 = 0.5\nv0 = 0.5\nk2 = 1000.0\n",
    );
    let out = anthracnose(&["run", &cfg, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = tmp.path().join("o/p/p");
    let estimate = fs::read_to_string(dir.join("estimate.svg")).unwrap();
    assert_eq!(count_class(&estimate, "polyline", "series"), 2);
    assert_eq!(count_class(&estimate, "polygon", "band"), 2);
    let error = fs::read_to_string(dir.join("error.svg")).unwrap();
    assert_eq!(count_class(&error, "polyline", "series"), 3);
    assert!(anthracnose(&["check", "o"], tmp.path()).status.success());
}
