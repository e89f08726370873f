//! The anticipating smoothing problem for the correlated pair model.
//!
//! Given the coupled system
//!
//! ```text
//! dx1(t) = a1(x1(t)) dt + dw1(t)
//! dx2(t) = a2(x1(t)) dt + dw2(t)
//! ```
//!
//! with correlated driving noise, the goal is the conditional law of the
//! hidden state `x1(t)` given the *entire* observed path `x2` — smoothing,
//! not filtering.  Three independent routes to the same object live here:
//!
//! * [`bayes_smoother`]: importance sampling.  Draw `w1` from its exact
//!   Gaussian conditional law given the observation, weight by the
//!   anticipating density `p(w1, u)`, and self-normalize.
//! * [`solve_spde`]: evolve the unnormalized conditional field
//!   `U(r, t) = E(f(r + w1(t)) p | w2)` as a chaos-coefficient PDE: a heat
//!   term in `r`, a Wick transport term against the increments of
//!   `γ(t) = E(w1(t) | w2)`, and a drift third term.
//! * [`consistency_check`]: a direct chaos projection of `f(w1(t))·p`
//!   (Monte-Carlo expansion followed by the conditional projection), which is
//!   the same discrete object the other two approximate, used to referee.
//!
//! [`kolmogorov_check`] covers the no-conditioning limit: when the
//! conditional expectation degenerates to a plain expectation the field
//! satisfies the classical backward equation, and the residual of that PDE is
//! measured on a common-random-number Monte-Carlo surface.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chaos::{expand, ChaosVector};
use crate::error::{Error, Result};
use crate::gaussian::CovModel;
use crate::girsanov::{self, DriftSpec, ScalarFn};
use crate::grid::TimeGrid;
use crate::gsro::IntegratorProcess;
use crate::rng;

/// Smooth scalar observable with two bounded derivatives on the working
/// domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// Gaussian bump `exp(-(r - center)^2 / (2 width^2))`.
    Bump { center: f64, width: f64 },
    /// The identity `r -> r` (used by the moment-style backward checks).
    Identity,
}

impl TestFunction {
    /// Standard bump centered at the origin with unit width.
    pub fn standard_bump() -> Self {
        TestFunction::Bump {
            center: 0.0,
            width: 1.0,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            TestFunction::Bump { center, width } => {
                let u = (r - center) / width;
                (-0.5 * u * u).exp()
            }
            TestFunction::Identity => r,
        }
    }

    pub fn d1(&self, r: f64) -> f64 {
        match *self {
            TestFunction::Bump { center, width } => {
                let u = (r - center) / width;
                -u / width * (-0.5 * u * u).exp()
            }
            TestFunction::Identity => 1.0,
        }
    }

    pub fn d2(&self, r: f64) -> f64 {
        match *self {
            TestFunction::Bump { center, width } => {
                let u = (r - center) / width;
                (u * u - 1.0) / (width * width) * (-0.5 * u * u).exp()
            }
            TestFunction::Identity => 0.0,
        }
    }

    /// Crude scale `max(|f|, |f'|, |f''|)` over `|r| <= r_max`, used to set
    /// discretization tolerances.
    pub fn derivative_scale(&self, r_max: f64) -> f64 {
        match *self {
            TestFunction::Bump { width, .. } => {
                let w = width.abs().max(1e-9);
                (1.0_f64).max(0.607 / w).max(1.0 / (w * w))
            }
            TestFunction::Identity => r_max.max(1.0),
        }
    }
}

/// Uniform spatial grid for the field variable `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
}

impl RGrid {
    pub fn new(r_min: f64, r_max: f64, points: usize) -> Result<Self> {
        if !(r_max > r_min) || points < 3 {
            return Err(Error::OutOfRange {
                name: "r_grid",
                value: points as f64,
                constraint: "r_max > r_min and at least 3 points",
            });
        }
        Ok(RGrid {
            r_min,
            r_max,
            points,
        })
    }

    /// Symmetric grid `[-half, half]` with an odd point count, so that
    /// `r = 0` lies exactly on the grid.
    pub fn symmetric(half: f64, points_per_side: usize) -> Result<Self> {
        Self::new(-half, half, 2 * points_per_side + 1)
    }

    pub fn dr(&self) -> f64 {
        (self.r_max - self.r_min) / (self.points - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        let dr = self.dr();
        (0..self.points).map(|i| self.r_min + i as f64 * dr).collect()
    }

    /// Index whose grid value is closest to `r`.
    pub fn nearest_index(&self, r: f64) -> usize {
        let dr = self.dr();
        let raw = ((r - self.r_min) / dr).round();
        (raw.max(0.0) as usize).min(self.points - 1)
    }
}

/// Full problem statement for the smoothing routines.
#[derive(Debug, Clone)]
pub struct SmoothingModel {
    pub cov: CovModel,
    pub drift: DriftSpec,
    pub f: TestFunction,
    pub r_grid: RGrid,
}

impl SmoothingModel {
    /// Validates the drift against the covariance model (the density used for
    /// the importance weights must correspond to a well-posed shifted law).
    pub fn new(cov: CovModel, drift: DriftSpec, f: TestFunction, r_grid: RGrid) -> Result<Self> {
        drift.check_smallness(&cov)?;
        Ok(SmoothingModel {
            cov,
            drift,
            f,
            r_grid,
        })
    }

    pub fn n(&self) -> usize {
        self.cov.n()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.cov.grid()
    }
}

/// A batch of simulated model trajectories (rows are paths).
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
}

impl PathBundle {
    pub fn len(&self) -> usize {
        self.x1.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Simulates `m` independent trajectories of the pair model with the
/// correlated driving noise, Euler scheme on the model grid.
pub fn simulate_model(model: &SmoothingModel, seed: u64, m: usize) -> PathBundle {
    let n = model.n();
    let grid = *model.grid();
    let drift = model.drift;
    let rows = rng::par_collect(m, |i| {
        let sample = model.cov.sample_pair(seed, i as u64);
        let (x1, x2) = girsanov::simulate_pair(&drift, &sample.w1, &sample.w2, &grid);
        (x1, x2, sample.w1, sample.w2)
    });
    let mut out = PathBundle {
        x1: DMatrix::zeros(m, n + 1),
        x2: DMatrix::zeros(m, n + 1),
        w1: DMatrix::zeros(m, n + 1),
        w2: DMatrix::zeros(m, n + 1),
    };
    for (k, (x1, x2, w1, w2)) in rows.into_iter().enumerate() {
        out.x1.row_mut(k).copy_from(&x1.transpose());
        out.x2.row_mut(k).copy_from(&x2.transpose());
        out.w1.row_mut(k).copy_from(&w1.transpose());
        out.w2.row_mut(k).copy_from(&w2.transpose());
    }
    out
}

/// Output of the importance-sampling smoother.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmootherOutput {
    /// Self-normalized estimate of `E(f(x1(t_query)) | x2 = observed)`.
    pub psi: f64,
    /// Linearized standard error of `psi`.
    pub se: f64,
    /// Effective sample size of the importance weights.
    pub ess: f64,
    /// Set when `ess` drops below 100 and the estimate should not be trusted.
    pub unreliable: bool,
    /// Conditional histograms: row `t` holds the weighted distribution of the
    /// hidden state value at grid time `t` over the spatial bins; each row
    /// sums to one.
    pub pi: DMatrix<f64>,
}

/// Conditional expectation of `f(x1(t))` given a fully observed second
/// component, by exact Gaussian conditional sampling plus density weighting.
///
/// `observed` is the observation path on the model grid (length `n + 1`).
/// The hidden-path candidates are drawn from the Gaussian conditional law of
/// `w1` given `w2 = observed`, each weighted by the anticipating density
/// evaluated on the pair (candidate, observation), and all estimates are
/// self-normalized.  `t_index` selects the query time `t = t_index · dt`.
pub fn bayes_smoother(
    model: &SmoothingModel,
    observed: &DVector<f64>,
    t_index: usize,
    seed: u64,
    samples: usize,
) -> Result<SmootherOutput> {
    let n = model.n();
    if observed.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: observed.len(),
        });
    }
    if t_index > n {
        return Err(Error::OutOfRange {
            name: "t_index",
            value: t_index as f64,
            constraint: "at most the number of grid steps",
        });
    }
    let law = model.cov.conditional_law()?;
    let sqrt_dt = model.grid().sqrt_dt();
    let mut xi2 = DVector::zeros(n);
    for i in 0..n {
        xi2[i] = (observed[i + 1] - observed[i]) / sqrt_dt;
    }
    let drift = model.drift;
    let f = model.f;
    let r_grid = model.r_grid;

    let rows: Vec<Result<(f64, f64, Vec<usize>)>> = rng::par_collect(samples, |i| {
        let mut r = rng::stream(seed, i as u64);
        let xi1 = law.sample(&xi2, &mut r);
        let mut w1 = DVector::zeros(n + 1);
        for k in 0..n {
            w1[k + 1] = w1[k] + xi1[k] * sqrt_dt;
        }
        let sample = model.cov.from_paths(&w1, observed)?;
        let weight = girsanov::density_p(&drift, &sample, &model.cov)?.value;
        let value = f.value(w1[t_index]);
        let bins: Vec<usize> = (0..=n).map(|t| r_grid.nearest_index(w1[t])).collect();
        Ok((weight, value, bins))
    });

    let mut weight_sum = 0.0;
    let mut weight_sq_sum = 0.0;
    let mut value_sum = 0.0;
    let mut pi = DMatrix::zeros(n + 1, r_grid.points);
    let mut all: Vec<(f64, f64)> = Vec::with_capacity(samples);
    for row in rows {
        let (w, v, bins) = row?;
        weight_sum += w;
        weight_sq_sum += w * w;
        value_sum += w * v;
        for (t, &b) in bins.iter().enumerate() {
            pi[(t, b)] += w;
        }
        all.push((w, v));
    }
    if weight_sum <= 0.0 {
        return Err(Error::DegenerateCovariance(
            "importance weights sum to zero".into(),
        ));
    }
    let psi = value_sum / weight_sum;
    let mut se_sq = 0.0;
    for (w, v) in &all {
        let d = v - psi;
        se_sq += w * w * d * d;
    }
    let se = se_sq.sqrt() / weight_sum;
    let ess = weight_sum * weight_sum / weight_sq_sum;
    for t in 0..=n {
        let row_sum: f64 = pi.row(t).iter().sum();
        if row_sum > 0.0 {
            for b in 0..r_grid.points {
                pi[(t, b)] /= row_sum;
            }
        }
    }
    Ok(SmootherOutput {
        psi,
        se,
        ess,
        unreliable: ess < 100.0,
        pi,
    })
}

/// Realization of the drift term in the field equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThirdTerm {
    /// The reduced form valid in the `a2 = 0` regime: `a1(r) ∂_r U dt`.
    SimpleA2Zero,
    /// The full conditional term: a Monte-Carlo chaos expansion of
    /// `f'(r + w1(t)) · (S ∇p)_1(t)` projected onto the observation
    /// subalgebra, refreshed at every coarse time step.
    GeneralChaos { samples: usize },
}

/// Tuning knobs for [`solve_spde_with`].
#[derive(Debug, Clone)]
pub struct SpdeOptions {
    /// Monte-Carlo sample count for the initial density projection.
    pub expand_samples: usize,
    /// Explicit substep count per coarse time step; `None` picks the smallest
    /// count satisfying the stability bound `dt_sub <= dr^2 / 2`.
    pub substeps: Option<usize>,
    /// Drift-term realization; `None` selects the reduced form when `a2 = 0`
    /// and the chaos form otherwise.
    pub third: Option<ThirdTerm>,
    /// Grid times whose full chaos slices should be retained (the final slice
    /// is always kept).
    pub snapshots: Vec<usize>,
}

impl Default for SpdeOptions {
    fn default() -> Self {
        SpdeOptions {
            expand_samples: 100_000,
            substeps: None,
            third: None,
            snapshots: Vec::new(),
        }
    }
}

/// The evolved conditional field.
///
/// `U(r, t) = E(f(r + w1(t)) p | w2)` is stored as one chaos expansion per
/// retained `(r, t)` pair; all expansions are supported on the observation
/// subalgebra (their coefficients are invariant under the conditional
/// projector), which is monitored during the evolution.
#[derive(Debug, Clone)]
pub struct SpdeField {
    r_values: Vec<f64>,
    grid: TimeGrid,
    states: Vec<Option<Vec<ChaosVector>>>,
    mean_surface: DMatrix<f64>,
    normalizer: ChaosVector,
    gamma: IntegratorProcess,
    off_subspace_max: f64,
    substeps: usize,
    init_se: f64,
}

impl SpdeField {
    pub fn r_values(&self) -> &[f64] {
        &self.r_values
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Chaos slice at a retained grid time.
    pub fn state(&self, t_index: usize) -> Option<&[ChaosVector]> {
        self.states.get(t_index)?.as_deref()
    }

    /// Deterministic part `E U(r, t)` over the whole `(t, r)` surface.
    pub fn mean_surface(&self) -> &DMatrix<f64> {
        &self.mean_surface
    }

    /// Conditional-normalization expansion `E(p | w2)`; constant in time.
    pub fn normalizer(&self) -> &ChaosVector {
        &self.normalizer
    }

    /// The regression process `γ(t) = E(w1(t) | w2)` as an integrator.
    pub fn gamma(&self) -> &IntegratorProcess {
        &self.gamma
    }

    /// Largest observed distance of the field from the observation
    /// subalgebra.
    pub fn off_subspace_max(&self) -> f64 {
        self.off_subspace_max
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Standard-error scale of the Monte-Carlo initial projection (zero when
    /// the initial value is exact).
    pub fn init_se(&self) -> f64 {
        self.init_se
    }

    /// Field value at a retained time, spatial index and coordinate point.
    pub fn evaluate(&self, t_index: usize, r_index: usize, z: &DVector<f64>) -> Option<f64> {
        Some(self.state(t_index)?[r_index].evaluate(z))
    }

    /// Field value divided by the conditional normalization at the same
    /// point: the Bayes-normalized smoothing estimate.
    pub fn normalized(&self, t_index: usize, r_index: usize, z: &DVector<f64>) -> Option<f64> {
        let num = self.evaluate(t_index, r_index, z)?;
        let den = self.normalizer.evaluate(z);
        Some(num / den)
    }
}

/// Solves the conditional-field equation with default options.
pub fn solve_spde(model: &SmoothingModel, max_degree: usize, seed: u64) -> Result<SpdeField> {
    solve_spde_with(model, max_degree, seed, &SpdeOptions::default())
}

/// Solves the conditional-field equation
///
/// ```text
/// dU(r, t) = ½ ∂²_r U dt + ∂_r U ◊ dγ(t) + (drift term) dt
/// ```
///
/// by explicit stepping: central differences in `r`, a Wick–Riemann product
/// against the increments of the regression process `γ` for the transport
/// term, and either the reduced `a1(r) ∂_r U` drift term or its full chaos
/// realization.  The initial value is `U(r, 0) = f(r) · E(p | w2)`.
///
/// Stability requires `dt_sub <= dr²/2`; the solver substeps each coarse grid
/// interval to satisfy it (interpolating `γ` linearly), or returns
/// [`Error::CflViolated`] when an explicit substep count refuses to.
pub fn solve_spde_with(
    model: &SmoothingModel,
    max_degree: usize,
    seed: u64,
    options: &SpdeOptions,
) -> Result<SpdeField> {
    let n = model.n();
    let dim = 2 * n;
    let grid = *model.grid();
    let dt = grid.dt();
    let r_values = model.r_grid.values();
    let r_count = r_values.len();
    let dr = model.r_grid.dr();
    let cfl_limit = 0.5 * dr * dr;

    let substeps = match options.substeps {
        Some(s) => {
            if s == 0 || dt / s as f64 > cfl_limit * (1.0 + 1e-12) {
                return Err(Error::CflViolated {
                    dt: dt / s.max(1) as f64,
                    limit: cfl_limit,
                });
            }
            s
        }
        None => (dt / cfl_limit).ceil().max(1.0) as usize,
    };
    let dt_sub = dt / substeps as f64;

    let third = options.third.unwrap_or(if model.drift.a2 == ScalarFn::Zero {
        ThirdTerm::SimpleA2Zero
    } else {
        ThirdTerm::GeneralChaos { samples: 20_000 }
    });

    // Initial conditional projection of the density.  Exact shortcuts: with
    // no drift the density is identically one; with independent components
    // the conditional expectation of a functional of the first block is its
    // mean, and E p = 1 exactly (the density is normalized).
    let v_is_zero = model.cov.v().iter().all(|&x| x == 0.0);
    let drift_is_zero =
        model.drift.a1 == ScalarFn::Zero && model.drift.a2 == ScalarFn::Zero;
    let (normalizer, init_se) = if drift_is_zero || v_is_zero {
        (ChaosVector::constant(dim, 1.0), 0.0)
    } else {
        let cov = model.cov.clone();
        let drift = model.drift;
        let out = expand(
            move |z| {
                let sample = cov.sample_from_whitened(z.clone());
                girsanov::density_p(&drift, &sample, &cov)
                    .map(|e| e.value)
                    .unwrap_or(f64::NAN)
            },
            dim,
            max_degree,
            options.expand_samples,
            seed,
        )?;
        let projected = model.cov.project_observable(&out.chaos)?;
        (projected, out.max_se)
    };

    // gamma regression rows and their per-substep increments.
    let gamma_rows = model.cov.regress_gamma();
    let gamma = IntegratorProcess::from_rows(grid, gamma_rows.clone())?;

    let mut current: Vec<ChaosVector> = r_values
        .iter()
        .map(|&r| {
            let mut u = normalizer.clone();
            u.scale(model.f.value(r));
            u
        })
        .collect();

    let mut states: Vec<Option<Vec<ChaosVector>>> = vec![None; n + 1];
    let mut mean_surface = DMatrix::zeros(n + 1, r_count);
    let mut off_subspace_max = 0.0f64;

    let record =
        |slice: &[ChaosVector], t: usize, surface: &mut DMatrix<f64>| {
            for (i, u) in slice.iter().enumerate() {
                surface[(t, i)] = u.mean();
            }
        };
    record(&current, 0, &mut mean_surface);
    off_subspace_max =
        off_subspace_max.max(off_subspace_distance(model, &current, full_check(dim))?);
    if options.snapshots.contains(&0) {
        states[0] = Some(current.clone());
    }

    let inv_dr2 = 1.0 / (dr * dr);
    let inv_2dr = 1.0 / (2.0 * dr);

    for step in 0..n {
        // Per-substep transport increment (gamma interpolates linearly).
        let mut d_gamma = DVector::zeros(dim);
        for j in 0..dim {
            d_gamma[j] = (gamma_rows[(step + 1, j)] - gamma_rows[(step, j)]) / substeps as f64;
        }
        let gamma_active = d_gamma.iter().any(|&x| x != 0.0);
        let gamma_inc = ChaosVector::first_chaos(&d_gamma);

        // Chaos drift term, frozen over the coarse step.
        let general_third: Option<Vec<ChaosVector>> = match third {
            ThirdTerm::SimpleA2Zero => None,
            ThirdTerm::GeneralChaos { samples } => {
                let mut terms = Vec::with_capacity(r_count);
                for &r in &r_values {
                    terms.push(conditional_drift_term(
                        model,
                        r,
                        step,
                        max_degree,
                        samples,
                        seed ^ 0x5eed_0000 ^ ((step as u64) << 32),
                    )?);
                }
                Some(terms)
            }
        };

        for _ in 0..substeps {
            let mut next: Vec<ChaosVector> = Vec::with_capacity(r_count);
            for i in 0..r_count {
                if i == 0 || i == r_count - 1 {
                    next.push(current[i].clone());
                    continue;
                }
                // Heat and transport stencils from the frozen slice.
                let lap = ChaosVector::linear_combine(&[
                    (inv_dr2, &current[i + 1]),
                    (-2.0 * inv_dr2, &current[i]),
                    (inv_dr2, &current[i - 1]),
                ])?;
                let slope = ChaosVector::linear_combine(&[
                    (inv_2dr, &current[i + 1]),
                    (-inv_2dr, &current[i - 1]),
                ])?;
                let mut u = current[i].clone();
                u.axpy(0.5 * dt_sub, &lap);
                if gamma_active {
                    let transport = slope.wick(&gamma_inc, max_degree)?;
                    u.axpy(1.0, &transport);
                }
                match third {
                    ThirdTerm::SimpleA2Zero => {
                        u.axpy(model.drift.a1.value(r_values[i]) * dt_sub, &slope);
                    }
                    ThirdTerm::GeneralChaos { .. } => {
                        let terms = general_third.as_ref().expect("general terms built above");
                        u.axpy(dt_sub, &terms[i]);
                    }
                }
                next.push(u);
            }
            current = next;
        }

        let t = step + 1;
        record(&current, t, &mut mean_surface);
        let check_all = full_check(dim) || t == n;
        off_subspace_max =
            off_subspace_max.max(off_subspace_distance(model, &current, check_all)?);
        if options.snapshots.contains(&t) || t == n {
            states[t] = Some(current.clone());
        }
    }

    Ok(SpdeField {
        r_values,
        grid,
        states,
        mean_surface,
        normalizer,
        gamma,
        off_subspace_max,
        substeps,
        init_se,
    })
}

/// Whether the subalgebra monitor can afford to project every spatial point
/// at every step (cheap for small coordinate dimensions).
fn full_check(dim: usize) -> bool {
    dim <= 16
}

/// Distance of a field slice from the observation subalgebra: the norm of
/// `U - Γ(Π)U`, maximized over monitored spatial points.  When `all` is
/// false only a five-point spatial sample is projected (the projection is the
/// single most expensive operation in the loop); the final slice is always
/// checked in full by the caller.
fn off_subspace_distance(
    model: &SmoothingModel,
    slice: &[ChaosVector],
    all: bool,
) -> Result<f64> {
    let count = slice.len();
    let indices: Vec<usize> = if all || count <= 5 {
        (0..count).collect()
    } else {
        vec![0, count / 4, count / 2, 3 * count / 4, count - 1]
    };
    let mut worst = 0.0f64;
    for i in indices {
        let projected = model.cov.project_observable(&slice[i])?;
        let diff = slice[i].sub(&projected);
        worst = worst.max(diff.norm_sq().sqrt());
    }
    Ok(worst)
}

/// Monte-Carlo chaos realization of the conditional drift term
/// `E(f'(r + w1(t)) · (S ∇p)_1(t) | w2)` at one spatial point and one coarse
/// time index.
///
/// The integrand uses the gradient identity
/// `S ∇p = p · [h + S Dhᵀ S^{-1}(ξ - h)]`; its first-block component at cell
/// `t` is converted from increment coordinates to a function value by the
/// `1/sqrt(dt)` rescaling.  The expansion is projected onto the observation
/// subalgebra before use.
fn conditional_drift_term(
    model: &SmoothingModel,
    r: f64,
    t_index: usize,
    max_degree: usize,
    samples: usize,
    seed: u64,
) -> Result<ChaosVector> {
    let dim = 2 * model.n();
    let cov = model.cov.clone();
    let drift = model.drift;
    let f = model.f;
    let grid = *model.grid();
    let sqrt_dt = grid.sqrt_dt();
    let out = expand(
        move |z| {
            let sample = cov.sample_from_whitened(z.clone());
            let (h, dh) = match girsanov::h_and_jacobian(&drift, &sample.w1, &grid) {
                Ok(v) => v,
                Err(_) => return f64::NAN,
            };
            let p = match girsanov::density_p(&drift, &sample, &cov) {
                Ok(e) => e.value,
                Err(_) => return f64::NAN,
            };
            let resid = &sample.xi - &h;
            let grad = &h + cov.s() * (dh.transpose() * (cov.s_inv() * resid));
            let sdp1 = p * grad[t_index] / sqrt_dt;
            f.d1(r + sample.w1[t_index]) * sdp1
        },
        dim,
        max_degree,
        samples,
        seed,
    )?;
    model.cov.project_observable(&out.chaos)
}

/// Residual of the Wick–Riemann step against its product-minus-correction
/// realization: for a chaos vector `α` and the first-chaos element `y = (c, z)`,
///
/// ```text
/// α ◊ y  =  α · y − (Dα, c)
/// ```
///
/// holds exactly (the pointwise product splits into a degree-raising and a
/// degree-lowering half).  Returns the norm of the difference computed with
/// library operations on both sides; used to cross-check the transport step
/// on small instances.
pub fn wick_step_crosscheck(alpha: &ChaosVector, c: &DVector<f64>) -> Result<f64> {
    let cap = alpha.max_degree() + 1;
    let y = ChaosVector::first_chaos(c);
    let wick = alpha.wick(&y, cap)?;
    let product = alpha.mul_pointwise(&y, cap)?;
    let correction = alpha.derivative().dot_deterministic(c)?;
    let mut alt = product.clone();
    alt.axpy(-1.0, &correction);
    let diff = wick.sub(&alt);
    Ok(diff.norm_sq().sqrt())
}

/// One backward-equation verification problem for the expectation-operator
/// limit of the conditional field: `Φ(r, s) = E f(x(T))` with `x(s) = r` and
/// `dx = a(x) dt + b dW`.
#[derive(Debug, Clone)]
pub struct KolmogorovProblem {
    pub label: String,
    pub drift: ScalarFn,
    pub diffusion: f64,
    pub f: TestFunction,
    pub grid: TimeGrid,
    pub r_grid: RGrid,
    /// Keep every `s_stride`-th grid time as a backward-variable sample.
    pub s_stride: usize,
    pub samples: usize,
    pub seed: u64,
}

impl KolmogorovProblem {
    /// Driftless unit diffusion: the field is the heat semigroup of `f`.
    pub fn brownian(seed: u64) -> Self {
        KolmogorovProblem {
            label: "brownian".into(),
            drift: ScalarFn::Zero,
            diffusion: 1.0,
            f: TestFunction::standard_bump(),
            grid: TimeGrid::unit(64),
            r_grid: RGrid::symmetric(3.0, 16).unwrap(),
            s_stride: 4,
            samples: 20_000,
            seed,
        }
    }

    /// Mean-reverting linear drift with the identity observable: the field is
    /// `r e^{-(T-s)}` in closed form.
    pub fn ornstein_uhlenbeck(seed: u64) -> Self {
        KolmogorovProblem {
            label: "ornstein-uhlenbeck".into(),
            drift: ScalarFn::Linear { slope: -1.0 },
            diffusion: 1.0,
            f: TestFunction::Identity,
            grid: TimeGrid::unit(64),
            r_grid: RGrid::symmetric(3.0, 16).unwrap(),
            s_stride: 4,
            samples: 20_000,
            seed,
        }
    }

    /// Zero diffusion: pure deterministic transport along the drift flow.
    pub fn transport(seed: u64) -> Self {
        KolmogorovProblem {
            label: "transport".into(),
            drift: ScalarFn::Linear { slope: -1.0 },
            diffusion: 0.0,
            f: TestFunction::standard_bump(),
            grid: TimeGrid::unit(64),
            r_grid: RGrid::symmetric(3.0, 16).unwrap(),
            s_stride: 4,
            samples: 4_000,
            seed,
        }
    }
}

/// Measured backward-equation residual for one [`KolmogorovProblem`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KolmogorovReport {
    pub label: String,
    /// Largest interior-point residual of `∂_sΦ + ½b²∂²_rΦ + a∂_rΦ`.
    pub max_residual: f64,
    /// Residual tolerance at the worst point (Monte-Carlo + stencil part).
    pub tolerance_at_worst: f64,
    /// Largest ratio residual/tolerance over interior points; pass iff ≤ 1.
    pub worst_ratio: f64,
    pub pass: bool,
    /// Monte-Carlo mean surface, rows = backward times, columns = space.
    pub phi: DMatrix<f64>,
    /// Backward-time values corresponding to `phi` rows.
    pub s_values: Vec<f64>,
    /// Spatial values corresponding to `phi` columns.
    pub r_values: Vec<f64>,
}

/// Verifies the classical backward equation on a Monte-Carlo surface built
/// with common random numbers.
///
/// For every path the same driving increments serve all `(r, s)` starting
/// points, so the finite-difference stencil of the per-path observable is a
/// smooth function of the start point and the stencil's Monte-Carlo error
/// stays far below the individual-value error.  The residual tolerance
/// combines four standard errors of the per-path stencil with an explicit
/// discretization budget: third/fourth difference quotients of the measured
/// surface multiplied by the usual `Δs²`, `dr²` truncation weights plus an
/// Euler weak-error term proportional to `dt`.
pub fn kolmogorov_check(problem: &KolmogorovProblem) -> KolmogorovReport {
    let n = problem.grid.steps();
    let dt = problem.grid.dt();
    let sqrt_dt = problem.grid.sqrt_dt();
    let stride = problem.s_stride.max(1);
    let s_indices: Vec<usize> = (0..=n).step_by(stride).collect();
    let s_count = s_indices.len();
    let r_values = problem.r_grid.values();
    let r_count = r_values.len();
    let dr = problem.r_grid.dr();
    let ds = stride as f64 * dt;
    let drift = problem.drift;
    let b = problem.diffusion;
    let f = problem.f;

    // Per-path surfaces with shared increments across starting points.
    let surfaces: Vec<Vec<f64>> = rng::par_collect(problem.samples, |k| {
        let mut r = rng::stream(problem.seed, k as u64);
        let noise = rng::normal_vector(&mut r, n);
        let mut surface = vec![0.0; s_count * r_count];
        for (si, &s_idx) in s_indices.iter().enumerate() {
            for (ri, &r0) in r_values.iter().enumerate() {
                let mut x = r0;
                for step in s_idx..n {
                    x += drift.value(x) * dt + b * noise[step] * sqrt_dt;
                }
                surface[si * r_count + ri] = f.value(x);
            }
        }
        surface
    });

    // Mean and per-entry second moment of the per-path stencil residuals,
    // plus the mean surface itself.
    let cells = s_count * r_count;
    let mut phi_mean = vec![0.0f64; cells];
    for surf in &surfaces {
        for (j, &v) in surf.iter().enumerate() {
            phi_mean[j] += v;
        }
    }
    let m = problem.samples as f64;
    for v in &mut phi_mean {
        *v /= m;
    }

    let stencil = |surf: &[f64], si: usize, ri: usize| -> f64 {
        let at = |s: usize, r: usize| surf[s * r_count + r];
        let d_s = (at(si + 1, ri) - at(si - 1, ri)) / (2.0 * ds);
        let d_rr = (at(si, ri + 1) - 2.0 * at(si, ri) + at(si, ri - 1)) / (dr * dr);
        let d_r = (at(si, ri + 1) - at(si, ri - 1)) / (2.0 * dr);
        d_s + 0.5 * b * b * d_rr + drift.value(r_values[ri]) * d_r
    };

    let mut max_residual = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut tolerance_at_worst = f64::INFINITY;

    // Discretization budget from measured difference quotients.
    let phi_at = |s: usize, r: usize| phi_mean[s * r_count + r];
    let mut sup_sss = 0.0f64;
    let mut sup_rrr = 0.0f64;
    let mut sup_rrrr = 0.0f64;
    for si in 2..s_count.saturating_sub(2) {
        for ri in 2..r_count - 2 {
            let d3s = (phi_at(si + 2, ri) - 2.0 * phi_at(si + 1, ri)
                + 2.0 * phi_at(si - 1, ri)
                - phi_at(si - 2, ri))
                / (2.0 * ds * ds * ds);
            sup_sss = sup_sss.max(d3s.abs());
            let d3r = (phi_at(si, ri + 2) - 2.0 * phi_at(si, ri + 1)
                + 2.0 * phi_at(si, ri - 1)
                - phi_at(si, ri - 2))
                / (2.0 * dr * dr * dr);
            sup_rrr = sup_rrr.max(d3r.abs());
            let d4r = (phi_at(si, ri + 2) - 4.0 * phi_at(si, ri + 1) + 6.0 * phi_at(si, ri)
                - 4.0 * phi_at(si, ri - 1)
                + phi_at(si, ri - 2))
                / (dr * dr * dr * dr);
            sup_rrrr = sup_rrrr.max(d4r.abs());
        }
    }
    let scale = f.derivative_scale(problem.r_grid.r_max.abs().max(problem.r_grid.r_min.abs()));
    let euler_weak = dt * drift.sup_deriv() * scale * (1.0 + b * b);
    let disc = ds * ds / 6.0 * sup_sss
        + dr * dr * (0.5 * b * b / 12.0 * sup_rrrr + drift.sup_deriv().max(1.0) / 6.0 * sup_rrr)
        + euler_weak;

    for si in 1..s_count - 1 {
        for ri in 1..r_count - 1 {
            // Monte-Carlo error of the stencil from per-path values.
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for (k, surf) in surfaces.iter().enumerate() {
                let v = stencil(surf, si, ri);
                let nf = (k + 1) as f64;
                let d = v - mean;
                mean += d / nf;
                m2 += d * (v - mean);
            }
            let se = (m2 / (m * (m - 1.0))).sqrt();
            let tol = 4.0 * se + disc;
            let res = mean.abs();
            let ratio = res / tol;
            if res > max_residual {
                max_residual = res;
            }
            if ratio > worst_ratio {
                worst_ratio = ratio;
                tolerance_at_worst = tol;
            }
        }
    }

    let mut phi = DMatrix::zeros(s_count, r_count);
    for si in 0..s_count {
        for ri in 0..r_count {
            phi[(si, ri)] = phi_at(si, ri);
        }
    }
    KolmogorovReport {
        label: problem.label.clone(),
        max_residual,
        tolerance_at_worst,
        worst_ratio,
        pass: worst_ratio <= 1.0,
        phi,
        s_values: s_indices
            .iter()
            .map(|&i| problem.grid.point(i))
            .collect(),
        r_values,
    }
}

/// Side-by-side comparison of the three smoothing routes at one query time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Importance-sampling estimate and its standard error.
    pub psi_bayes: f64,
    pub se_bayes: f64,
    /// Direct conditional regression (expansions of `f(w1(t))·p` and `p`
    /// against the observation chaos, evaluated at the observed increments)
    /// with its replicate-based error and measured truncation gap.
    pub psi_direct: f64,
    pub se_direct: f64,
    pub direct_truncation_gap: f64,
    /// Field-equation estimate: `U(0, t)` normalized by `E(p|w2)`, both
    /// evaluated at the observation point.
    pub psi_spde: f64,
    /// Mean of the unnormalized field at `r = 0` from the chaos coefficients
    /// versus reweighted Monte Carlo, with the Monte-Carlo error.
    pub mean_spde: f64,
    pub mean_mc: f64,
    pub se_mean_mc: f64,
    /// Covariance of the field with the terminal observation value, chaos
    /// versus model simulation.
    pub cov_spde: f64,
    pub cov_mc: f64,
    pub se_cov_mc: f64,
    /// Explicit allowance for the field-equation stepping error.
    pub scheme_allowance: f64,
    /// Largest off-subspace mass observed during the field evolution.
    pub off_subspace_max: f64,
    pub pass_bayes_vs_direct: bool,
    pub pass_spde_vs_direct: bool,
    pub pass_mean: bool,
    pub pass_covariance: bool,
    pub pass_measurability: bool,
}

impl ConsistencyReport {
    pub fn pass(&self) -> bool {
        self.pass_bayes_vs_direct
            && self.pass_spde_vs_direct
            && self.pass_mean
            && self.pass_covariance
            && self.pass_measurability
    }
}

/// Cross-validates the smoother, the direct chaos projection, and the field
/// equation on one sampled observation.
///
/// The observation is drawn from the model itself.  Three estimates of
/// `E(f(x1(t)) | x2)` are produced and compared pairwise; the Bayes/direct
/// pair must agree within pure Monte-Carlo error, while the field-equation
/// leg carries an explicit `O(dt + dr²)` stepping allowance.  Two moment
/// identities (plain mean and covariance with the terminal observation) tie
/// the chaos coefficients back to plain model simulation, and the
/// σ(observation)-measurability of the evolved field is asserted.
pub fn consistency_check(
    model: &SmoothingModel,
    t_index: usize,
    max_degree: usize,
    seed: u64,
    bayes_samples: usize,
    expand_samples: usize,
) -> Result<ConsistencyReport> {
    let n = model.n();
    if t_index > n {
        return Err(Error::OutOfRange {
            name: "t_index",
            value: t_index as f64,
            constraint: "at most the number of grid steps",
        });
    }
    let r0 = model.r_grid.nearest_index(0.0);
    if model.r_grid.values()[r0].abs() > 1e-9 {
        return Err(Error::OutOfRange {
            name: "r_grid",
            value: model.r_grid.values()[r0],
            constraint: "must contain r = 0",
        });
    }

    // One observation drawn from the model law.
    let obs_sample = model.cov.sample_pair(seed, 0);
    let (_, x2) = girsanov::simulate_pair(
        &model.drift,
        &obs_sample.w1,
        &obs_sample.w2,
        model.grid(),
    );
    let observed = x2;
    let sqrt_dt = model.grid().sqrt_dt();
    let mut xi2 = DVector::zeros(n);
    for i in 0..n {
        xi2[i] = (observed[i + 1] - observed[i]) / sqrt_dt;
    }
    let z_star = model.cov.observation_point(&xi2)?;

    // Route one: importance sampling.
    let smoother = bayes_smoother(model, &observed, t_index, seed + 1, bayes_samples)?;

    // Route two: conditional regression onto the observation chaos.
    //
    // Sampling `(ξ1, ξ2)` jointly and regressing `f(w1(t))·p` and `p`
    // against Hermite polynomials in the observation increments estimates
    // `E(·|ξ2)` as a function on the observation block alone; the ratio at
    // the observed increments is the smoothed value.  Working on half the
    // joint dimension makes a deeper expansion affordable, and re-evaluating
    // the ratio one degree lower measures the residual truncation bias,
    // which enters the comparison tolerance instead of being ignored.
    let direct_degree = (max_degree + 2).min(6);
    let direct = |rep_seed: u64| -> Result<(f64, f64)> {
        let sqrt_dt = model.grid().sqrt_dt();
        let expand_for = |scale_by_f: bool| -> Result<ChaosVector> {
            let cov = model.cov.clone();
            let drift = model.drift;
            let f = model.f;
            let law = cov.conditional_law()?;
            let out = expand(
                move |u| {
                    // Deterministic signal draw keyed on the observation
                    // sample, so numerator and denominator share paths.
                    let mut key = 0xcbf2_9ce4_8422_2325u64;
                    for &x in u.iter() {
                        key ^= x.to_bits();
                        key = key.wrapping_mul(0x0000_0100_0000_01b3);
                    }
                    let mut r = rng::stream(rep_seed, key);
                    let xi1 = law.sample(u, &mut r);
                    let mut w1 = DVector::zeros(n + 1);
                    let mut w2 = DVector::zeros(n + 1);
                    for k in 0..n {
                        w1[k + 1] = w1[k] + xi1[k] * sqrt_dt;
                        w2[k + 1] = w2[k] + u[k] * sqrt_dt;
                    }
                    let sample = match cov.from_paths(&w1, &w2) {
                        Ok(s) => s,
                        Err(_) => return f64::NAN,
                    };
                    match girsanov::density_p(&drift, &sample, &cov) {
                        Ok(e) if scale_by_f => e.value * f.value(w1[t_index]),
                        Ok(e) => e.value,
                        Err(_) => f64::NAN,
                    }
                },
                n,
                direct_degree,
                expand_samples,
                rep_seed,
            )?;
            Ok(out.chaos)
        };
        let num = expand_for(true)?;
        let den = expand_for(false)?;
        let full = num.evaluate(&xi2) / den.evaluate(&xi2);
        let low = num.truncate(direct_degree - 1).0.evaluate(&xi2)
            / den.truncate(direct_degree - 1).0.evaluate(&xi2);
        Ok((full, (full - low).abs()))
    };
    let mut ratios = Vec::new();
    let mut gaps = Vec::new();
    for rep in 0..3u64 {
        let (ratio, gap) = direct(seed + 10 + 7 * rep)?;
        ratios.push(ratio);
        gaps.push(gap);
    }
    let (psi_direct, spread) = rng::mean_and_se(&ratios);
    let se_direct = spread + 1e-6;
    let direct_truncation_gap = gaps.iter().fold(0.0f64, |a, &b| a.max(b));

    // Route three: the field equation.
    let mut options = SpdeOptions {
        expand_samples,
        snapshots: vec![t_index],
        ..SpdeOptions::default()
    };
    options.substeps = None;
    let field = solve_spde_with(model, max_degree, seed + 30, &options)?;
    let psi_spde = field
        .normalized(t_index, r0, &z_star)
        .expect("snapshot requested above");

    // Moment identities at r = 0: chaos coefficients vs model simulation.
    let slice = field.state(t_index).expect("snapshot requested above");
    let u0 = &slice[r0];
    let mean_spde = u0.mean();
    let w2_terminal = {
        let c = model.cov.indicator_coords(1, n);
        ChaosVector::first_chaos(&(model.cov.s_half() * c))
    };
    let cov_spde = u0.l2_inner(&w2_terminal);

    let grid = *model.grid();
    let drift = model.drift;
    let f = model.f;
    let cov_model = model.cov.clone();
    let pairs = rng::par_collect(bayes_samples, |i| {
        let sample = cov_model.sample_pair(seed + 40, i as u64);
        let (x1, x2) = girsanov::simulate_pair(&drift, &sample.w1, &sample.w2, &grid);
        let v = f.value(x1[t_index]);
        (v, v * x2[n])
    });
    let means: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let covs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (mean_mc, se_mean_mc) = rng::mean_and_se(&means);
    let (cov_mc, se_cov_mc) = rng::mean_and_se(&covs);

    let dr = model.r_grid.dr();
    let scheme_allowance = model.grid().dt() + dr * dr + 3.0 * field.init_se();

    let pass_bayes_vs_direct = (smoother.psi - psi_direct).abs()
        <= 3.0 * (smoother.se + se_direct) + direct_truncation_gap;
    let pass_spde_vs_direct = (psi_spde - psi_direct).abs()
        <= 3.0 * se_direct + scheme_allowance + direct_truncation_gap;
    let pass_mean = (mean_spde - mean_mc).abs() <= 3.0 * se_mean_mc + scheme_allowance;
    let pass_covariance = (cov_spde - cov_mc).abs() <= 3.0 * se_cov_mc + scheme_allowance;
    let pass_measurability = field.off_subspace_max() < 1e-10;

    Ok(ConsistencyReport {
        psi_bayes: smoother.psi,
        se_bayes: smoother.se,
        psi_direct,
        se_direct,
        direct_truncation_gap,
        psi_spde,
        mean_spde,
        mean_mc,
        se_mean_mc,
        cov_spde,
        cov_mc,
        se_cov_mc,
        scheme_allowance,
        off_subspace_max: field.off_subspace_max(),
        pass_bayes_vs_direct,
        pass_spde_vs_direct,
        pass_mean,
        pass_covariance,
        pass_measurability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::CrossCovarianceSpec;
    use approx::assert_abs_diff_eq;

    fn model(n: usize, rho: f64, drift: DriftSpec) -> SmoothingModel {
        let cov = CovModel::build(TimeGrid::unit(n), &CrossCovarianceSpec::Scalar { rho }).unwrap();
        SmoothingModel::new(
            cov,
            drift,
            TestFunction::standard_bump(),
            RGrid::symmetric(5.0, 20).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn simulate_without_drift_returns_noise() {
        let m = model(6, 0.3, DriftSpec::zero());
        let bundle = simulate_model(&m, 5, 4);
        assert_eq!(bundle.len(), 4);
        assert_abs_diff_eq!((&bundle.x1 - &bundle.w1).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((&bundle.x2 - &bundle.w2).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rgrid_contains_origin() {
        let g = RGrid::symmetric(4.0, 8).unwrap();
        let vals = g.values();
        assert_eq!(vals.len(), 17);
        assert_abs_diff_eq!(vals[g.nearest_index(0.0)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn smoother_without_drift_matches_gaussian_conditioning() {
        // With no drift the weights are identically one and the estimate is
        // the plain Gaussian conditional expectation of the bump, for which
        // the convolution is closed-form.
        let m = model(8, 0.4, DriftSpec::zero());
        let obs = m.cov.sample_pair(3, 0);
        let t_index = 8;
        let out = bayes_smoother(&m, &obs.w2, t_index, 11, 40_000).unwrap();
        assert!(!out.unreliable);

        // Conditional law of w1(t) given the whole second path: mean from
        // the regression rows at the observation point, variance = |c|^2 -
        // |Pi c|^2 in whitened coordinates.
        let sqrt_dt = m.grid().sqrt_dt();
        let n = m.n();
        let mut xi2 = DVector::zeros(n);
        for i in 0..n {
            xi2[i] = (obs.w2[i + 1] - obs.w2[i]) / sqrt_dt;
        }
        let z_star = m.cov.observation_point(&xi2).unwrap();
        let rows = m.cov.regress_gamma();
        let mean: f64 = (0..2 * n).map(|j| rows[(t_index, j)] * z_star[j]).sum();
        let c = m.cov.s_half() * m.cov.indicator_coords(0, t_index);
        let total_var = c.dot(&c);
        let explained: f64 = (0..2 * n).map(|j| rows[(t_index, j)].powi(2)).sum();
        let var = total_var - explained;
        // Gaussian convolution of the unit bump.
        let expect = (1.0 / (1.0 + var)).sqrt() * (-0.5 * mean * mean / (1.0 + var)).exp();
        assert!(
            (out.psi - expect).abs() < 3.0 * out.se + 1e-3,
            "psi {} expect {} se {}",
            out.psi,
            expect,
            out.se
        );
    }

    #[test]
    fn smoother_histograms_are_normalized() {
        let m = model(6, 0.3, DriftSpec::tanh_sin(0.2, 0.1));
        let obs = m.cov.sample_pair(7, 1);
        let out = bayes_smoother(&m, &obs.w2, 3, 13, 2_000).unwrap();
        for t in 0..=6 {
            let s: f64 = out.pi.row(t).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tiny_sample_sets_unreliable_flag() {
        let m = model(6, 0.3, DriftSpec::tanh_sin(0.2, 0.1));
        let obs = m.cov.sample_pair(7, 2);
        let out = bayes_smoother(&m, &obs.w2, 3, 13, 50).unwrap();
        assert!(out.unreliable);
    }

    #[test]
    fn heat_limit_matches_closed_form() {
        // No drift, independent components: the field is deterministic and
        // solves the heat equation; the bump widens in closed form.
        let cov =
            CovModel::build(TimeGrid::unit(16), &CrossCovarianceSpec::Zero).unwrap();
        let m = SmoothingModel::new(
            cov,
            DriftSpec::zero(),
            TestFunction::standard_bump(),
            RGrid::symmetric(6.0, 48).unwrap(),
        )
        .unwrap();
        let field = solve_spde(&m, 3, 17).unwrap();
        let surface = field.mean_surface();
        let t = 1.0_f64;
        for (i, &r) in field.r_values().iter().enumerate() {
            if r.abs() > 4.0 {
                continue;
            }
            let exact = (1.0 / (1.0 + t)).sqrt() * (-0.5 * r * r / (1.0 + t)).exp();
            let got = surface[(16, i)];
            assert!(
                (got - exact).abs() < 0.01,
                "r={r}: got {got}, exact {exact}"
            );
        }
        assert_eq!(field.off_subspace_max(), 0.0);
    }

    #[test]
    fn spde_preserves_observation_measurability() {
        let cov = CovModel::build(
            TimeGrid::unit(6),
            &CrossCovarianceSpec::Scalar { rho: 0.4 },
        )
        .unwrap();
        let m = SmoothingModel::new(
            cov,
            DriftSpec::tanh_sin(0.15, 0.0),
            TestFunction::standard_bump(),
            RGrid::symmetric(5.0, 15).unwrap(),
        )
        .unwrap();
        let options = SpdeOptions {
            expand_samples: 20_000,
            ..SpdeOptions::default()
        };
        let field = solve_spde_with(&m, 3, 23, &options).unwrap();
        assert!(
            field.off_subspace_max() < 1e-10,
            "off-subspace mass {}",
            field.off_subspace_max()
        );
    }

    #[test]
    fn explicit_substep_count_must_respect_stability() {
        let cov =
            CovModel::build(TimeGrid::unit(8), &CrossCovarianceSpec::Zero).unwrap();
        let m = SmoothingModel::new(
            cov,
            DriftSpec::zero(),
            TestFunction::standard_bump(),
            RGrid::symmetric(5.0, 40).unwrap(),
        )
        .unwrap();
        let options = SpdeOptions {
            substeps: Some(1),
            ..SpdeOptions::default()
        };
        assert!(matches!(
            solve_spde_with(&m, 2, 3, &options),
            Err(Error::CflViolated { .. })
        ));
    }

    #[test]
    fn wick_step_identity_holds() {
        let mut alpha = ChaosVector::zeros(5, 3).unwrap();
        alpha.coeff_mut(0).set(&[], 0.7);
        alpha.coeff_mut(1).set(&[2], -0.4);
        alpha.coeff_mut(2).set(&[0, 3], 0.9);
        alpha.coeff_mut(3).set(&[1, 1, 4], 0.25);
        let c = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1, -0.4]);
        let residual = wick_step_crosscheck(&alpha, &c).unwrap();
        assert!(residual < 1e-12, "residual {residual}");
    }

    #[test]
    fn kolmogorov_brownian_preset_passes() {
        let mut problem = KolmogorovProblem::brownian(29);
        problem.samples = 4_000;
        let report = kolmogorov_check(&problem);
        assert!(
            report.pass,
            "worst ratio {} residual {}",
            report.worst_ratio, report.max_residual
        );
    }
}
