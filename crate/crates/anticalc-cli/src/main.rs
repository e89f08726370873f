//! Command-line front end for the anticipating calculus toolkit.
//!
//! `anticalc verify` runs the verification battery; `smooth`, `spde`, `fbm`
//! and `density` run single experiments on the configured model.  Every run
//! writes `report.json`, `checks.csv` and `timings.csv` plus command-specific
//! CSV artifacts into the output directory.  Exit code 0 means every check
//! passed, 1 means at least one check failed, 2 means the run could not be
//! set up (bad flags, bad file, invalid model parameters).

mod commands;
mod config;
mod report;
mod suites;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{Overrides, Preset};
use report::{CheckRecord, RunReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("could not read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("could not write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("could not parse configuration: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Library(#[from] anticalc::Error),
    #[error("could not serialize report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("could not build worker pool: {0}")]
    Threads(String),
}

#[derive(Parser)]
#[command(
    name = "anticalc",
    version,
    about = "Anticipating stochastic calculus on a two-component Wiener space",
    arg_required_else_help = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default: $ANTICALC_OUT or ./anticalc-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Named bundle of configuration defaults.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Worker pool size (default: all cores).
    #[arg(long, global = true, value_name = "COUNT")]
    threads: Option<usize>,
    /// Soft wall-clock budget in seconds for the verification battery.
    #[arg(long, global = true, value_name = "SECONDS")]
    time_cap: Option<f64>,

    /// Time horizon of the grid.
    #[arg(long, global = true, value_name = "T")]
    horizon: Option<f64>,
    /// Number of grid steps.
    #[arg(long, global = true, value_name = "STEPS")]
    n: Option<usize>,
    /// Chaos truncation degree.
    #[arg(long, global = true, value_name = "DEGREE")]
    k: Option<usize>,
    /// Monte Carlo sample count.
    #[arg(long, global = true, value_name = "SAMPLES")]
    m: Option<usize>,
    /// Seed for every pseudo-random stream.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Cross-covariance family: zero | scalar | volterra-constant | volterra-exponential.
    #[arg(long, global = true, value_name = "KIND")]
    correlation: Option<String>,
    /// Correlation coefficient for the scalar family (implies --correlation scalar).
    #[arg(long, global = true, value_name = "RHO")]
    rho: Option<f64>,
    /// Kernel level for the constant Volterra family (implies --correlation volterra-constant).
    #[arg(long, global = true, value_name = "LEVEL")]
    level: Option<f64>,
    /// Kernel amplitude for the exponential Volterra family (implies --correlation volterra-exponential).
    #[arg(long, global = true, value_name = "AMPLITUDE")]
    amplitude: Option<f64>,
    /// Kernel decay rate for the exponential Volterra family (implies --correlation volterra-exponential).
    #[arg(long, global = true, value_name = "RATE")]
    rate: Option<f64>,

    /// Signal drift shape: zero | constant | linear | tanh | sin.
    #[arg(long, global = true, value_name = "SHAPE")]
    a1: Option<String>,
    /// Parameter of the signal drift shape.
    #[arg(long, global = true, value_name = "VALUE")]
    a1_param: Option<f64>,
    /// Observation drift shape: zero | constant | linear | tanh | sin.
    #[arg(long, global = true, value_name = "SHAPE")]
    a2: Option<String>,
    /// Parameter of the observation drift shape.
    #[arg(long, global = true, value_name = "VALUE")]
    a2_param: Option<f64>,

    /// Hurst index of the fractional memory kernel.
    #[arg(long, global = true, value_name = "H")]
    hurst: Option<f64>,
    /// Grid steps used by the smoothing commands.
    #[arg(long, global = true, value_name = "STEPS")]
    smoothing_n: Option<usize>,
    /// Query time as a fraction of the horizon.
    #[arg(long, global = true, value_name = "FRACTION")]
    t_fraction: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            horizon: self.horizon,
            n: self.n,
            correlation: self.correlation.clone(),
            rho: self.rho,
            level: self.level,
            amplitude: self.amplitude,
            rate: self.rate,
            a1: self.a1.clone(),
            a1_param: self.a1_param,
            a2: self.a2.clone(),
            a2_param: self.a2_param,
            max_degree: self.k,
            samples: self.m,
            seed: self.seed,
            hurst: self.hurst,
            smoothing_n: self.smoothing_n,
            t_fraction: self.t_fraction,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the verification battery and write a pass/fail report.
    Verify {
        /// Comma-separated suite names (default: every suite).
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        suite: Vec<String>,
    },
    /// Condition the signal on one observed path and smooth a functional.
    Smooth,
    /// Integrate the smoothing field equation and export the mean surface.
    Spde,
    /// Build the fractional memory kernel and validate its covariance.
    Fbm,
    /// Sample the anticipating density and test its normalization.
    Density,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify { .. } => "verify",
            Command::Smooth => "smooth",
            Command::Spde => "spde",
            Command::Fbm => "fbm",
            Command::Density => "density",
        }
    }
}

fn resolve_out_dir(flag: Option<&Path>, file: Option<&str>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = file {
        return PathBuf::from(p);
    }
    if let Ok(p) = std::env::var("ANTICALC_OUT") {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    PathBuf::from("anticalc-out")
}

fn run_verify(
    cfg: &config::RunConfig,
    out: &Path,
    run_report: &mut RunReport,
    requested: &[String],
    time_cap: Option<f64>,
) -> Result<(), CliError> {
    let registry = suites::registry();
    let known = suites::suite_names();
    for name in requested {
        if !known.contains(&name.as_str()) {
            return Err(CliError::Config(format!(
                "unknown suite `{name}`; expected one of: {}",
                known.join(", ")
            )));
        }
    }
    let started = Instant::now();
    let mut capped = false;
    for check in &registry {
        if !requested.is_empty() && !requested.iter().any(|s| s == check.suite) {
            continue;
        }
        if let Some(cap) = time_cap {
            if capped || started.elapsed().as_secs_f64() > cap {
                capped = true;
                run_report.push(CheckRecord {
                    name: check.name.into(),
                    suite: check.suite.into(),
                    anchor: check.anchor.into(),
                    value: 0.0,
                    tolerance: 0.0,
                    pass: false,
                    note: Some(format!("skipped: time cap of {cap} s exceeded")),
                    seconds: 0.0,
                });
                println!("[SKIP] {}/{} (time cap)", check.suite, check.name);
                continue;
            }
        }
        let t0 = Instant::now();
        let outcome = (check.run)(cfg, out)?;
        let seconds = t0.elapsed().as_secs_f64();
        for artifact in &outcome.artifacts {
            run_report.add_artifact(artifact);
        }
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] {}/{}  value {:.3e}  tol {:.3e}  ({seconds:.1}s)",
            check.suite, check.name, outcome.value, outcome.tolerance
        );
        run_report.push(CheckRecord {
            name: check.name.into(),
            suite: check.suite.into(),
            anchor: check.anchor.into(),
            value: outcome.value,
            tolerance: outcome.tolerance,
            pass: outcome.pass,
            note: None,
            seconds,
        });
    }
    let total = run_report.records.len() as f64;
    let passed = run_report.records.iter().filter(|r| r.pass).count() as f64;
    run_report.results.insert("checks_total".into(), total);
    run_report.results.insert("checks_passed".into(), passed);
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let overrides = cli.common.overrides();
    let (cfg, plumbing) = config::resolve(
        cli.common.config.as_deref(),
        cli.common.preset,
        &overrides,
    )?;
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            return Err(CliError::Config(
                "field threads: must be at least 1 (got 0)".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Threads(e.to_string()))?;
    }
    let out_dir = resolve_out_dir(cli.common.out.as_deref(), plumbing.out_dir.as_deref());
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Write {
        path: out_dir.clone(),
        source: e,
    })?;

    let hash = config::config_hash(&cfg);
    let mut run_report = RunReport::new(cli.command.name(), hash, cfg.clone());
    match &cli.command {
        Command::Verify { suite } => {
            run_verify(&cfg, &out_dir, &mut run_report, suite, cli.common.time_cap)?
        }
        Command::Smooth => commands::smooth(&cfg, &out_dir, &mut run_report)?,
        Command::Spde => commands::spde(&cfg, &out_dir, &mut run_report)?,
        Command::Fbm => commands::fbm(&cfg, &out_dir, &mut run_report)?,
        Command::Density => commands::density(&cfg, &out_dir, &mut run_report)?,
    }
    let all_pass = run_report.all_pass;
    let checks = run_report.records.len();
    run_report.write(&out_dir)?;
    println!(
        "{}: {} of {} checks passed; report in {}",
        cli.command.name(),
        run_report.records.iter().filter(|r| r.pass).count(),
        checks,
        out_dir.display()
    );
    Ok(all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
