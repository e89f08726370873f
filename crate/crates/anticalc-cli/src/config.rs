//! Layered configuration: built-in defaults, an optional named preset, an
//! optional TOML file, and command-line flags, resolved in that order into a
//! fully-populated [`RunConfig`].
//!
//! The resolved struct is what gets hashed and embedded into `report.json`;
//! plumbing that cannot change any number (output directory, thread count,
//! time cap) deliberately stays outside it so reports remain byte-identical
//! across machines and pool sizes.

use std::fs;
use std::path::Path;

use anticalc::gaussian::CrossCovarianceSpec;
use anticalc::girsanov::{DriftSpec, ScalarFn};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSection,
    pub correlation: CorrelationSection,
    pub drift: DriftSection,
    pub chaos: ChaosSection,
    pub run: RunSection,
    pub smoothing: SmoothingSection,
    pub fbm: FbmSection,
    pub tolerances: ToleranceSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    /// Horizon `T` of the uniform time grid.
    pub horizon: f64,
    /// Number of grid steps.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSection {
    /// One of `zero`, `scalar`, `volterra-constant`, `volterra-exponential`.
    pub kind: String,
    /// Cross-correlation level for `scalar`.
    pub rho: f64,
    /// Kernel level for `volterra-constant`.
    pub level: f64,
    /// Kernel amplitude for `volterra-exponential`.
    pub amplitude: f64,
    /// Kernel decay rate for `volterra-exponential`.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSection {
    /// Hidden-component drift preset: `zero`, `constant`, `linear`, `tanh`, `sin`.
    pub a1: String,
    pub a1_param: f64,
    /// Observed-component drift preset, same names.
    pub a2: String,
    pub a2_param: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosSection {
    /// Truncation degree `K` of chaos expansions.
    pub max_degree: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    /// Reference Monte-Carlo sample count `m`.
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSection {
    /// Grid steps of the smoothing experiment (separate from `[grid] n`
    /// because the consistency routes scale much faster in `n`).
    pub n: usize,
    /// Query time as a fraction of the horizon.
    pub t_fraction: f64,
    /// Spatial half-width of the field grid.
    pub r_half: f64,
    /// Spatial points per side (grid size `2·points + 1`).
    pub r_points_per_side: usize,
    /// Importance-sampling draw count.
    pub bayes_samples: usize,
    /// Sample count for chaos-regression expansions.
    pub expand_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbmSection {
    /// Memory exponent `H` of the fractional driver, `0.5 ≤ H < 1`.
    pub hurst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSection {
    /// Standard-error multiplier for Monte-Carlo bands.
    pub se_multiplier: f64,
    /// Bound for identities that hold to machine precision.
    pub exact_tol: f64,
    /// Bound for identities accumulated through tensor algebra.
    pub identity_tol: f64,
    /// Bound for operator commutation residuals.
    pub residual_tol: f64,
    /// Bound for the regularized-determinant deviation from one.
    pub det_tol: f64,
    /// Slack over the theoretical integrator norm bound.
    pub bound_slack: f64,
    /// Relative band for sampled covariance curves.
    pub covariance_band: f64,
    /// Relative band for field surfaces against diffusion oracles.
    pub surface_band: f64,
    /// Bound for off-subspace mass of the evolved field.
    pub measurability_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSection {
                horizon: 1.0,
                n: 16,
            },
            correlation: CorrelationSection {
                kind: "scalar".into(),
                rho: 0.3,
                level: 0.5,
                amplitude: 0.4,
                rate: 1.0,
            },
            drift: DriftSection {
                a1: "zero".into(),
                a1_param: 0.0,
                a2: "zero".into(),
                a2_param: 0.0,
            },
            chaos: ChaosSection { max_degree: 4 },
            run: RunSection {
                samples: 100_000,
                seed: 7,
            },
            smoothing: SmoothingSection {
                n: 8,
                t_fraction: 0.5,
                r_half: 4.0,
                r_points_per_side: 16,
                bayes_samples: 50_000,
                expand_samples: 30_000,
            },
            fbm: FbmSection { hurst: 0.75 },
            tolerances: ToleranceSection {
                se_multiplier: 4.0,
                exact_tol: 1e-12,
                identity_tol: 1e-10,
                residual_tol: 1e-8,
                det_tol: 1e-8,
                bound_slack: 1e-10,
                covariance_band: 0.03,
                surface_band: 0.02,
                measurability_tol: 1e-8,
            },
        }
    }
}

/// Named size bundles applied between the defaults and the file layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Small sample counts for smoke runs and byte-determinism checks.
    Minimal,
    /// The documented defaults.
    Standard,
}

// ---------------------------------------------------------------------------
// file layer: every field optional, unknown keys rejected
// ---------------------------------------------------------------------------

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    grid: Option<FileGrid>,
    correlation: Option<FileCorrelation>,
    drift: Option<FileDrift>,
    chaos: Option<FileChaos>,
    run: Option<FileRun>,
    smoothing: Option<FileSmoothing>,
    fbm: Option<FileFbm>,
    tolerances: Option<FileTolerances>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGrid {
    horizon: Option<f64>,
    n: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCorrelation {
    kind: Option<String>,
    rho: Option<f64>,
    level: Option<f64>,
    amplitude: Option<f64>,
    rate: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDrift {
    a1: Option<String>,
    a1_param: Option<f64>,
    a2: Option<String>,
    a2_param: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileChaos {
    max_degree: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRun {
    samples: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<String>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSmoothing {
    n: Option<usize>,
    t_fraction: Option<f64>,
    r_half: Option<f64>,
    r_points_per_side: Option<usize>,
    bayes_samples: Option<usize>,
    expand_samples: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileFbm {
    hurst: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTolerances {
    se_multiplier: Option<f64>,
    exact_tol: Option<f64>,
    identity_tol: Option<f64>,
    residual_tol: Option<f64>,
    det_tol: Option<f64>,
    bound_slack: Option<f64>,
    covariance_band: Option<f64>,
    surface_band: Option<f64>,
    measurability_tol: Option<f64>,
}

// ---------------------------------------------------------------------------
// flag layer
// ---------------------------------------------------------------------------

/// Command-line overrides, applied last.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub horizon: Option<f64>,
    pub n: Option<usize>,
    pub correlation: Option<String>,
    pub rho: Option<f64>,
    pub level: Option<f64>,
    pub amplitude: Option<f64>,
    pub rate: Option<f64>,
    pub a1: Option<String>,
    pub a1_param: Option<f64>,
    pub a2: Option<String>,
    pub a2_param: Option<f64>,
    pub max_degree: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub hurst: Option<f64>,
    pub smoothing_n: Option<usize>,
    pub t_fraction: Option<f64>,
}

/// Out-of-config plumbing resolved alongside the numeric configuration.
#[derive(Clone, Debug, Default)]
pub struct Plumbing {
    /// Output directory from the file layer, if any.
    pub out_dir: Option<String>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_preset(cfg: &mut RunConfig, preset: Preset) {
    match preset {
        Preset::Standard => {}
        Preset::Minimal => {
            cfg.grid.n = 8;
            cfg.run.samples = 5_000;
            cfg.smoothing.n = 6;
            cfg.smoothing.r_points_per_side = 8;
            cfg.smoothing.r_half = 3.0;
            cfg.smoothing.bayes_samples = 4_000;
            cfg.smoothing.expand_samples = 4_000;
        }
    }
}

fn apply_file(cfg: &mut RunConfig, file: FileConfig, plumbing: &mut Plumbing) {
    if let Some(g) = file.grid {
        set(&mut cfg.grid.horizon, g.horizon);
        set(&mut cfg.grid.n, g.n);
    }
    if let Some(c) = file.correlation {
        set(&mut cfg.correlation.kind, c.kind);
        set(&mut cfg.correlation.rho, c.rho);
        set(&mut cfg.correlation.level, c.level);
        set(&mut cfg.correlation.amplitude, c.amplitude);
        set(&mut cfg.correlation.rate, c.rate);
    }
    if let Some(d) = file.drift {
        set(&mut cfg.drift.a1, d.a1);
        set(&mut cfg.drift.a1_param, d.a1_param);
        set(&mut cfg.drift.a2, d.a2);
        set(&mut cfg.drift.a2_param, d.a2_param);
    }
    if let Some(c) = file.chaos {
        set(&mut cfg.chaos.max_degree, c.max_degree);
    }
    if let Some(r) = file.run {
        set(&mut cfg.run.samples, r.samples);
        set(&mut cfg.run.seed, r.seed);
        plumbing.out_dir = r.out_dir;
    }
    if let Some(s) = file.smoothing {
        set(&mut cfg.smoothing.n, s.n);
        set(&mut cfg.smoothing.t_fraction, s.t_fraction);
        set(&mut cfg.smoothing.r_half, s.r_half);
        set(&mut cfg.smoothing.r_points_per_side, s.r_points_per_side);
        set(&mut cfg.smoothing.bayes_samples, s.bayes_samples);
        set(&mut cfg.smoothing.expand_samples, s.expand_samples);
    }
    if let Some(f) = file.fbm {
        set(&mut cfg.fbm.hurst, f.hurst);
    }
    if let Some(t) = file.tolerances {
        set(&mut cfg.tolerances.se_multiplier, t.se_multiplier);
        set(&mut cfg.tolerances.exact_tol, t.exact_tol);
        set(&mut cfg.tolerances.identity_tol, t.identity_tol);
        set(&mut cfg.tolerances.residual_tol, t.residual_tol);
        set(&mut cfg.tolerances.det_tol, t.det_tol);
        set(&mut cfg.tolerances.bound_slack, t.bound_slack);
        set(&mut cfg.tolerances.covariance_band, t.covariance_band);
        set(&mut cfg.tolerances.surface_band, t.surface_band);
        set(&mut cfg.tolerances.measurability_tol, t.measurability_tol);
    }
}

fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides) -> Result<(), CliError> {
    set(&mut cfg.grid.horizon, ov.horizon);
    set(&mut cfg.grid.n, ov.n);

    // Parameter flags imply their correlation kind when no explicit kind is
    // given; an explicit `--correlation` always wins.
    if let Some(kind) = &ov.correlation {
        cfg.correlation.kind = kind.clone();
    } else {
        let implied: Vec<&str> = [
            ov.rho.map(|_| "scalar"),
            ov.level.map(|_| "volterra-constant"),
            ov.amplitude.or(ov.rate).map(|_| "volterra-exponential"),
        ]
        .into_iter()
        .flatten()
        .collect();
        match implied.as_slice() {
            [] => {}
            [one] => cfg.correlation.kind = (*one).into(),
            several => {
                return Err(CliError::Config(format!(
                    "field correlation.kind: ambiguous parameter flags imply {}; pass --correlation explicitly",
                    several.join(" and ")
                )))
            }
        }
    }
    set(&mut cfg.correlation.rho, ov.rho);
    set(&mut cfg.correlation.level, ov.level);
    set(&mut cfg.correlation.amplitude, ov.amplitude);
    set(&mut cfg.correlation.rate, ov.rate);

    set(&mut cfg.drift.a1, ov.a1.clone());
    set(&mut cfg.drift.a1_param, ov.a1_param);
    set(&mut cfg.drift.a2, ov.a2.clone());
    set(&mut cfg.drift.a2_param, ov.a2_param);

    set(&mut cfg.chaos.max_degree, ov.max_degree);
    set(&mut cfg.run.samples, ov.samples);
    set(&mut cfg.run.seed, ov.seed);
    set(&mut cfg.fbm.hurst, ov.hurst);
    set(&mut cfg.smoothing.n, ov.smoothing_n);
    set(&mut cfg.smoothing.t_fraction, ov.t_fraction);
    Ok(())
}

fn range_err(field: &str, got: impl std::fmt::Display, constraint: &str) -> CliError {
    CliError::Config(format!("field {field}: {constraint} (got {got})"))
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.grid;
    if !(g.horizon.is_finite() && g.horizon > 0.0) {
        return Err(range_err("grid.horizon", g.horizon, "must be positive and finite"));
    }
    if g.n == 0 || g.n > 512 {
        return Err(range_err("grid.n", g.n, "must be between 1 and 512"));
    }

    let c = &cfg.correlation;
    match c.kind.as_str() {
        "zero" | "scalar" | "volterra-constant" | "volterra-exponential" => {}
        other => {
            return Err(range_err(
                "correlation.kind",
                other,
                "must be zero|scalar|volterra-constant|volterra-exponential",
            ))
        }
    }
    if !(c.rho.is_finite() && c.rho.abs() < 1.0) {
        return Err(range_err("correlation.rho", c.rho, "must lie strictly inside (-1, 1)"));
    }
    for (name, v) in [
        ("correlation.level", c.level),
        ("correlation.amplitude", c.amplitude),
    ] {
        if !v.is_finite() {
            return Err(range_err(name, v, "must be finite"));
        }
    }
    if !(c.rate.is_finite() && c.rate >= 0.0) {
        return Err(range_err("correlation.rate", c.rate, "must be non-negative and finite"));
    }

    for (name, preset, param) in [
        ("drift.a1", cfg.drift.a1.as_str(), cfg.drift.a1_param),
        ("drift.a2", cfg.drift.a2.as_str(), cfg.drift.a2_param),
    ] {
        match preset {
            "zero" | "constant" | "linear" | "tanh" | "sin" => {}
            other => {
                return Err(range_err(name, other, "must be zero|constant|linear|tanh|sin"))
            }
        }
        if !param.is_finite() {
            return Err(range_err(name, param, "parameter must be finite"));
        }
    }

    if cfg.chaos.max_degree > 8 {
        return Err(range_err("chaos.max_degree", cfg.chaos.max_degree, "must be at most 8"));
    }

    let r = &cfg.run;
    if r.samples == 0 || r.samples > 50_000_000 {
        return Err(range_err("run.samples", r.samples, "must be between 1 and 5e7"));
    }

    let s = &cfg.smoothing;
    if s.n == 0 || s.n > 64 {
        return Err(range_err("smoothing.n", s.n, "must be between 1 and 64"));
    }
    if !(0.0..=1.0).contains(&s.t_fraction) {
        return Err(range_err("smoothing.t_fraction", s.t_fraction, "must lie in [0, 1]"));
    }
    if !(s.r_half.is_finite() && s.r_half > 0.0) {
        return Err(range_err("smoothing.r_half", s.r_half, "must be positive and finite"));
    }
    if s.r_points_per_side == 0 || s.r_points_per_side > 512 {
        return Err(range_err(
            "smoothing.r_points_per_side",
            s.r_points_per_side,
            "must be between 1 and 512",
        ));
    }
    if s.bayes_samples < 2 || s.expand_samples < 2 {
        return Err(range_err(
            "smoothing.bayes_samples/expand_samples",
            s.bayes_samples.min(s.expand_samples),
            "must be at least 2",
        ));
    }

    if !(0.5..1.0).contains(&cfg.fbm.hurst) {
        return Err(range_err("fbm.hurst", cfg.fbm.hurst, "must lie in [0.5, 1)"));
    }

    let t = &cfg.tolerances;
    for (name, v) in [
        ("tolerances.se_multiplier", t.se_multiplier),
        ("tolerances.exact_tol", t.exact_tol),
        ("tolerances.identity_tol", t.identity_tol),
        ("tolerances.residual_tol", t.residual_tol),
        ("tolerances.det_tol", t.det_tol),
        ("tolerances.bound_slack", t.bound_slack),
        ("tolerances.covariance_band", t.covariance_band),
        ("tolerances.surface_band", t.surface_band),
        ("tolerances.measurability_tol", t.measurability_tol),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(range_err(name, v, "must be positive and finite"));
        }
    }
    Ok(())
}

/// Resolves the four layers into the effective configuration.
pub fn resolve(
    file: Option<&Path>,
    preset: Option<Preset>,
    overrides: &Overrides,
) -> Result<(RunConfig, Plumbing), CliError> {
    let mut cfg = RunConfig::default();
    let mut plumbing = Plumbing::default();
    if let Some(p) = preset {
        apply_preset(&mut cfg, p);
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed: FileConfig = toml::from_str(&text)?;
        apply_file(&mut cfg, parsed, &mut plumbing);
    }
    apply_overrides(&mut cfg, overrides)?;
    validate(&cfg)?;
    Ok((cfg, plumbing))
}

/// Translates the named drift preset into the scalar coefficient function.
pub fn scalar_fn(name: &str, param: f64) -> ScalarFn {
    match name {
        "constant" => ScalarFn::Constant { level: param },
        "linear" => ScalarFn::Linear { slope: param },
        "tanh" => ScalarFn::Tanh { amplitude: param },
        "sin" => ScalarFn::Sin { amplitude: param },
        _ => ScalarFn::Zero,
    }
}

/// The drift pair described by the `[drift]` section.
pub fn drift_spec(cfg: &RunConfig) -> DriftSpec {
    DriftSpec {
        a1: scalar_fn(&cfg.drift.a1, cfg.drift.a1_param),
        a2: scalar_fn(&cfg.drift.a2, cfg.drift.a2_param),
    }
}

/// The cross-covariance described by the `[correlation]` section.
pub fn correlation_spec(cfg: &RunConfig) -> CrossCovarianceSpec {
    let c = &cfg.correlation;
    match c.kind.as_str() {
        "scalar" => CrossCovarianceSpec::Scalar { rho: c.rho },
        "volterra-constant" => CrossCovarianceSpec::VolterraConstant { level: c.level },
        "volterra-exponential" => CrossCovarianceSpec::VolterraExponential {
            amplitude: c.amplitude,
            rate: c.rate,
        },
        _ => CrossCovarianceSpec::Zero,
    }
}

/// FNV-1a over the canonical JSON encoding of the effective configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_both_formats() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        let text = toml::to_string(&cfg).unwrap();
        let again: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn flags_take_precedence_over_file_values() {
        let dir = std::env::temp_dir().join("anticalc-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("precedence.toml");
        std::fs::write(&path, "[grid]\nn = 8\n").unwrap();
        let ov = Overrides {
            n: Some(32),
            ..Overrides::default()
        };
        let (cfg, _) = resolve(Some(&path), None, &ov).unwrap();
        assert_eq!(cfg.grid.n, 32);
    }

    #[test]
    fn zero_steps_name_the_field() {
        let ov = Overrides {
            n: Some(0),
            ..Overrides::default()
        };
        let err = resolve(None, None, &ov).unwrap_err();
        assert!(err.to_string().contains("grid.n"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = std::env::temp_dir().join("anticalc-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("unknown.toml");
        std::fs::write(&path, "[grid]\nbogus = 1\n").unwrap();
        let err = resolve(Some(&path), None, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn ambiguous_correlation_flags_are_an_error() {
        let ov = Overrides {
            rho: Some(0.2),
            level: Some(0.4),
            ..Overrides::default()
        };
        let err = resolve(None, None, &ov).unwrap_err();
        assert!(err.to_string().contains("correlation.kind"), "{err}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = RunConfig::default();
        let h1 = config_hash(&cfg);
        let h2 = config_hash(&cfg);
        assert_eq!(h1, h2);
        let mut other = cfg.clone();
        other.run.seed = 8;
        assert_ne!(h1, config_hash(&other));
    }
}
