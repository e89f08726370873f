//! End-to-end tests of the `anticalc` binary: exit codes, artifact layout,
//! determinism, configuration precedence, and one independent numerical
//! reference for the field-equation command.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("anticalc-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn anticalc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anticalc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary should launch")
}

fn read_json(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn verify_minimal_is_byte_deterministic_and_thread_invariant() {
    let base = workdir("determinism");
    let (a, b, c) = (base.join("a"), base.join("b"), base.join("c"));
    let args = ["verify", "--preset", "minimal", "--seed", "7"];
    assert!(anticalc(&args, &a).status.success());
    assert!(anticalc(&args, &b).status.success());
    let threaded = ["verify", "--preset", "minimal", "--seed", "7", "--threads", "2"];
    assert!(anticalc(&threaded, &c).status.success());

    let bytes_a = fs::read(a.join("report.json")).unwrap();
    assert_eq!(bytes_a, fs::read(b.join("report.json")).unwrap(), "reruns must agree byte for byte");
    assert_eq!(bytes_a, fs::read(c.join("report.json")).unwrap(), "worker count must not leak into results");
    assert_eq!(
        fs::read(a.join("checks.csv")).unwrap(),
        fs::read(b.join("checks.csv")).unwrap()
    );
}

#[test]
fn flags_override_file_values() {
    let base = workdir("precedence");
    fs::write(base.join("cfg.toml"), "[grid]\nn = 8\n\n[run]\nsamples = 300\n").unwrap();
    let out = base.join("out");
    let status = anticalc(
        &["fbm", "--config", base.join("cfg.toml").to_str().unwrap(), "--n", "32"],
        &out,
    );
    assert!(status.status.success());
    let report = read_json(&out);
    assert_eq!(report["config"]["grid"]["n"], 32, "flag must beat the file");
    assert_eq!(report["config"]["run"]["samples"], 300, "file must beat the default");
}

#[test]
fn zero_steps_is_a_usage_error_naming_the_field() {
    let base = workdir("zero-steps");
    let output = anticalc(&["fbm", "--n", "0"], &base.join("out"));
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("grid.n"), "stderr should name the field: {stderr}");
}

#[test]
fn unknown_file_keys_are_rejected() {
    let base = workdir("unknown-key");
    fs::write(base.join("cfg.toml"), "[grid]\nn = 8\nmystery = 1\n").unwrap();
    let output = anticalc(
        &["fbm", "--config", base.join("cfg.toml").to_str().unwrap()],
        &base.join("out"),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("mystery"));
}

#[test]
fn unknown_suites_are_rejected() {
    let base = workdir("unknown-suite");
    let output = anticalc(&["verify", "--suite", "chaos,galaxies"], &base.join("out"));
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("galaxies"));
}

#[test]
fn suite_filter_restricts_the_records() {
    let base = workdir("suite-filter");
    let out = base.join("out");
    let output = anticalc(
        &["verify", "--preset", "minimal", "--suite", "determinant,calculus"],
        &out,
    );
    assert!(output.status.success());
    let report = read_json(&out);
    let suites: Vec<&str> = report["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["suite"].as_str().unwrap())
        .collect();
    assert_eq!(suites, ["determinant", "calculus"]);
}

#[test]
fn out_dir_defaults_to_the_environment_variable() {
    let base = workdir("env-out");
    let target = base.join("from-env");
    let output = Command::new(env!("CARGO_BIN_EXE_anticalc"))
        .args(["fbm", "--n", "8", "--m", "200"])
        .env("ANTICALC_OUT", &target)
        .current_dir(&base)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(target.join("report.json").exists());
}

/// With independent components and no drift, the field equation reduces to
/// the heat equation, so the terminal mean surface must match Gaussian
/// quadrature of the test function against the N(0, T) kernel.
#[test]
fn independent_field_surface_matches_heat_quadrature() {
    let base = workdir("heat");
    fs::write(
        base.join("cfg.toml"),
        "[smoothing]\nn = 32\nr_half = 3.6\nr_points_per_side = 24\n\n[run]\nsamples = 200\n",
    )
    .unwrap();
    let out = base.join("out");
    let output = anticalc(
        &[
            "spde",
            "--config",
            base.join("cfg.toml").to_str().unwrap(),
            "--a2",
            "zero",
            "--rho",
            "0.0",
            "--k",
            "0",
        ],
        &out,
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    // Terminal row of the exported surface.
    let surface = fs::read_to_string(out.join("u_surface.csv")).unwrap();
    let mut terminal: Vec<(f64, f64)> = Vec::new();
    for line in surface.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0] == "32" {
            terminal.push((cells[3].parse().unwrap(), cells[4].parse().unwrap()));
        }
    }
    assert_eq!(terminal.len(), 49);

    // Independent reference: the Gaussian observable exp(-r^2/2) convolved
    // with the N(0, T) heat kernel stays Gaussian, so at T = 1 the exact
    // answer is exp(-r^2/4)/sqrt(2).
    let reference = |r: f64| (-0.25 * r * r).exp() / (2.0f64).sqrt();

    let scale = terminal
        .iter()
        .map(|&(r, _)| reference(r).abs())
        .fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for &(r, u) in &terminal {
        if r.abs() <= 2.4 {
            worst = worst.max((u - reference(r)).abs());
        }
    }
    assert!(
        worst <= 0.02 * scale,
        "terminal surface deviates from the heat kernel: {worst:.4} vs allowed {:.4}",
        0.02 * scale
    );
}

#[test]
fn density_run_reports_normalization_and_artifacts() {
    let base = workdir("density");
    let out = base.join("out");
    let output = anticalc(
        &["density", "--n", "8", "--m", "2000", "--a1", "tanh", "--a1-param", "0.3"],
        &out,
    );
    assert!(output.status.success());
    let report = read_json(&out);
    let record = &report["records"][0];
    assert_eq!(record["name"], "density-normalization");
    assert!(record["pass"].as_bool().unwrap());
    let artifacts: Vec<&str> = report["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap())
        .collect();
    assert!(artifacts.contains(&"density_samples.csv"));
    assert!(artifacts.contains(&"quasinilpotence.csv"));
    let csv = fs::read_to_string(out.join("density_samples.csv")).unwrap();
    assert!(csv.starts_with("index,value,log_value,zeta,divergence_term,quadratic_term"));

    let mean = report["results"]["density_mean"].as_f64().unwrap();
    assert!((mean - 1.0).abs() < 0.1);
}

#[test]
fn smoother_histogram_rows_are_probability_vectors() {
    let base = workdir("smooth");
    let out = base.join("out");
    let output = anticalc(&["smooth", "--preset", "minimal"], &out);
    assert!(output.status.success());
    let report = read_json(&out);
    let psi = report["results"]["psi"].as_f64().unwrap();
    assert!(psi.is_finite() && (0.0..=1.0).contains(&psi));
    assert!(report["results"]["ess"].as_f64().unwrap() > 100.0);

    let csv = fs::read_to_string(out.join("pi_histogram.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<usize, f64>::new();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let t: usize = cells[0].parse().unwrap();
        let mass: f64 = cells[4].parse().unwrap();
        *sums.entry(t).or_insert(0.0) += mass;
    }
    assert_eq!(sums.len(), 7, "one histogram per grid point");
    for (t, total) in sums {
        assert!((total - 1.0).abs() < 1e-9, "row {t} sums to {total}");
    }
}

#[test]
fn time_cap_marks_skipped_checks_and_fails_the_run() {
    let base = workdir("time-cap");
    let out = base.join("out");
    let output = anticalc(
        &["verify", "--preset", "minimal", "--time-cap", "0.0"],
        &out,
    );
    assert_eq!(output.status.code(), Some(1), "a capped battery cannot pass");
    let report = read_json(&out);
    assert_eq!(report["all_pass"], false);
    let records = report["records"].as_array().unwrap();
    assert!(!records.is_empty());
    assert!(records
        .iter()
        .all(|r| r["note"].as_str().unwrap_or("").contains("time cap")));
}
