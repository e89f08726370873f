//! The conditional-expectation machinery of the correlated noise model:
//! projector algebra, regression rows, observation points, conditional
//! sampling — each checked against an independent route.

use anticalc::chaos::ChaosVector;
use anticalc::gaussian::{CovModel, CrossCovarianceSpec};
use anticalc::grid::TimeGrid;
use anticalc::rng;
use nalgebra::{DMatrix, DVector};

fn scalar_model(n: usize, rho: f64) -> CovModel {
    CovModel::build(TimeGrid::unit(n), &CrossCovarianceSpec::Scalar { rho }).unwrap()
}

fn volterra_model(n: usize, level: f64) -> CovModel {
    CovModel::build(
        TimeGrid::unit(n),
        &CrossCovarianceSpec::VolterraConstant { level },
    )
    .unwrap()
}

#[test]
fn projector_is_an_orthogonal_projection() {
    for model in [scalar_model(6, 0.45), volterra_model(6, 0.8)] {
        let pi = model.conditional_projector();
        let idem = (&pi * &pi) - &pi;
        let sym = &pi - pi.transpose();
        assert!(idem.abs().max() < 1e-12, "not idempotent: {}", idem.abs().max());
        assert!(sym.abs().max() < 1e-12, "not symmetric: {}", sym.abs().max());
    }
}

#[test]
fn regression_rows_equal_projected_coordinates() {
    // Row t of the regression matrix must be the conditional projection of
    // the path coordinate w1(t): one route goes through the projector and
    // transport of the degree-1 expansion, the other through the stored rows.
    for model in [scalar_model(8, 0.35), volterra_model(8, 0.7)] {
        let rows = model.regress_gamma();
        let n = model.n();
        for t in [0, n / 2, n] {
            let coords = model.s_half() * model.indicator_coords(0, t);
            let alpha = ChaosVector::first_chaos(&coords);
            let projected = model.project_observable(&alpha).unwrap();
            for j in 0..2 * n {
                let got = rows[(t, j)];
                let want = projected.coeff(1).get(&[j as u16]);
                assert!(
                    (got - want).abs() < 1e-12,
                    "row {t}, coord {j}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn observation_point_reproduces_observed_block() {
    // Transporting the raw second-block coordinates to the observation point
    // must return the observed increments themselves, and first-block
    // coordinates must land on their regression prediction.
    let model = scalar_model(8, 0.4);
    let n = model.n();
    let sample = model.sample_pair(31, 4);
    let xi2 = sample.xi2();
    let z_star = model.observation_point(&xi2).unwrap();

    for i in 0..n {
        // w2 increment coordinate = <e_{n+i}, xi> = <s_half e_{n+i}, xi'>.
        let coords = model.s_half() * model.indicator_coords(1, i + 1)
            - model.s_half() * model.indicator_coords(1, i);
        let alpha = ChaosVector::first_chaos(&coords);
        let projected = model.project_observable(&alpha).unwrap();
        let sqrt_dt = model.grid().sqrt_dt();
        let got = projected.evaluate(&z_star) / sqrt_dt;
        assert!(
            (got - xi2[i]).abs() < 1e-10,
            "coordinate {i}: {got} vs {}",
            xi2[i]
        );
    }

    // First-block path value at the observation point = regression mean.
    let law = model.conditional_law().unwrap();
    let mean_xi1 = law.mean(&xi2);
    let rows = model.regress_gamma();
    let sqrt_dt = model.grid().sqrt_dt();
    for t in 1..=n {
        let pred: f64 = (0..2 * n).map(|j| rows[(t, j)] * z_star[j]).sum();
        let partial: f64 = (0..t).map(|i| mean_xi1[i]).sum::<f64>() * sqrt_dt;
        assert!(
            (pred - partial).abs() < 1e-10,
            "time {t}: projected path {pred} vs conditional mean {partial}"
        );
    }
}

#[test]
fn conditional_projection_matches_monte_carlo_tower() {
    // E[(Gamma(Pi) alpha) psi] = E[alpha psi] for observation-measurable psi:
    // checked by plain simulation for a nonlinear alpha.
    let model = scalar_model(6, 0.5);
    let n = model.n();

    // alpha = w1(T)^2, psi = w2(T): both cubically integrable, exact chaos
    // representations available.
    let c1 = model.s_half() * model.indicator_coords(0, n);
    let w1_t = ChaosVector::first_chaos(&c1);
    let alpha = w1_t.mul_pointwise(&w1_t, 2).unwrap();
    let c2 = model.s_half() * model.indicator_coords(1, n);
    let psi = ChaosVector::first_chaos(&c2);

    let projected = model.project_observable(&alpha).unwrap();
    let exact = projected.mul_pointwise(&psi, 3).unwrap().mean();

    let m = 60_000;
    let vals = rng::par_collect(m, |i| {
        let s = model.sample_pair(99, i as u64);
        s.w1[n] * s.w1[n] * s.w2[n]
    });
    let (mc, se) = rng::mean_and_se(&vals);
    assert!(
        (exact - mc).abs() < 4.0 * se,
        "tower property: chaos {exact} vs MC {mc} (se {se})"
    );
}

#[test]
fn conditional_sampler_has_correct_moments() {
    let model = scalar_model(6, 0.5);
    let n = model.n();
    let law = model.conditional_law().unwrap();
    let xi2 = DVector::from_fn(n, |i, _| 0.3 * (i as f64 + 1.0) / n as f64);
    let mean = law.mean(&xi2);

    let m = 40_000;
    let draws = rng::par_collect(m, |i| {
        let mut r = rng::stream(17, i as u64);
        law.sample(&xi2, &mut r)
    });
    let mut emp_mean = DVector::zeros(n);
    for d in &draws {
        emp_mean += d;
    }
    emp_mean /= m as f64;
    assert!(
        (&emp_mean - &mean).abs().max() < 0.02,
        "conditional mean off by {}",
        (&emp_mean - &mean).abs().max()
    );

    // Covariance should be I - V V^T = (1 - rho^2) I for the scalar model.
    let mut cov = DMatrix::zeros(n, n);
    for d in &draws {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    cov /= m as f64;
    let expect = DMatrix::identity(n, n) * (1.0 - 0.25);
    assert!(
        (&cov - &expect).abs().max() < 0.05,
        "conditional covariance off by {}",
        (&cov - &expect).abs().max()
    );
}

#[test]
fn prefix_invariance_separates_diagonal_from_volterra_coupling() {
    // Joint prefix subspaces span both increment blocks up to time t.  A
    // pointwise (diagonal) coupling never correlates a prefix coordinate
    // with a later one, so ||P_t S - P_t S P_t|| vanishes; the Volterra
    // kernel correlates early observation increments with later signal
    // increments through its transpose block, so the same residual must be
    // visibly positive.
    let diagonal = scalar_model(8, 0.5);
    let n = diagonal.n();
    for t in 1..n {
        let r = diagonal.prefix_residual(t);
        assert!(r < 1e-12, "diagonal model leaks at prefix {t}: {r}");
    }

    let volterra = volterra_model(8, 0.9);
    let worst = (1..n)
        .map(|t| volterra.prefix_residual(t))
        .fold(0.0f64, f64::max);
    assert!(worst > 1e-3, "expected prefix leakage, got {worst}");
}

#[test]
fn whitening_reconstructs_covariance() {
    for model in [scalar_model(6, 0.4), volterra_model(6, 0.8)] {
        let s = model.s();
        let s_half = model.s_half();
        let rebuilt = s_half * s_half;
        assert!(
            (s - &rebuilt).abs().max() < 1e-10,
            "square root drift {}",
            (s - &rebuilt).abs().max()
        );
        let id = model.s_inv() * s;
        let eye = DMatrix::identity(2 * model.n(), 2 * model.n());
        assert!((id - eye).abs().max() < 1e-8);
    }
}
