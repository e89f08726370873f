//! Extended (Skorokhod-type) integration against integrator processes:
//! agreement with the Itô sum on adapted integrands, the transport
//! commutation property of strong random operators, and the sharp L2 bound
//! constant of integrators.

use anticalc::chaos::ChaosVector;
use anticalc::fbm::FbmKernel;
use anticalc::gaussian::{CovModel, CrossCovarianceSpec};
use anticalc::grid::TimeGrid;
use anticalc::gsro::{Gsro, IntegratorProcess};
use anticalc::linalg::operator_norm;
use anticalc::rng;
use nalgebra::{DMatrix, DVector};

/// Adapted polynomial integrand: cell k carries `1 + w(t_k) + w(t_k)^2/2`,
/// a functional of the increments strictly before k.
fn adapted_integrand(n: usize, sqrt_dt: f64) -> Vec<ChaosVector> {
    let mut cells = Vec::with_capacity(n);
    for k in 0..n {
        let mut coords = DVector::zeros(n);
        for j in 0..k {
            coords[j] = sqrt_dt;
        }
        let w_tk = ChaosVector::first_chaos(&coords);
        let sq = w_tk.mul_pointwise(&w_tk, 2).unwrap();
        let mut cell = ChaosVector::constant(n, 1.0);
        cell.axpy(1.0, &w_tk);
        cell.axpy(0.5, &sq);
        cells.push(cell);
    }
    cells
}

#[test]
fn extended_integral_equals_ito_sum_for_adapted_cells() {
    let n = 8;
    let grid = TimeGrid::unit(n);
    let sqrt_dt = grid.sqrt_dt();
    let process = IntegratorProcess::brownian(grid);
    let cells = adapted_integrand(n, sqrt_dt);
    let integral = process.integral_chaos(&cells, 4).unwrap();

    for path in 0..40 {
        let mut r = rng::stream(5, path);
        let z = rng::normal_vector(&mut r, n);
        // Itô sum: evaluate each cell at the path and pair with the increment.
        let mut ito = 0.0;
        for (k, cell) in cells.iter().enumerate() {
            ito += cell.evaluate(&z) * z[k] * sqrt_dt;
        }
        let ext = integral.evaluate(&z);
        assert!(
            (ext - ito).abs() < 1e-10,
            "path {path}: extended {ext} vs ito {ito}"
        );
    }
}

#[test]
fn ito_isometry_holds_in_the_algebra() {
    // For adapted cells the extended integral's variance is the sum of the
    // cells' second moments times dt — computed here purely from chaos
    // coefficients on both sides.
    let n = 6;
    let grid = TimeGrid::unit(n);
    let process = IntegratorProcess::brownian(grid);
    let cells = adapted_integrand(n, grid.sqrt_dt());
    let integral = process.integral_chaos(&cells, 4).unwrap();
    let lhs = integral.variance();
    let rhs: f64 = cells.iter().map(|c| c.norm_sq() * grid.dt()).sum();
    assert!(
        (lhs - rhs).abs() < 1e-10,
        "isometry: variance {lhs} vs sum {rhs}"
    );
}

#[test]
fn integral_operator_commutes_with_transport() {
    let n = 8;
    let grid = TimeGrid::unit(n);
    let process = IntegratorProcess::brownian(grid);
    let op = Gsro::from_integrator(&process);
    let cells = adapted_integrand(n, grid.sqrt_dt());

    let mut r = rng::stream(23, 0);
    let raw = DMatrix::from_fn(n, n, |_, _| rng::normal_vector(&mut r, 1)[0]);
    let contraction = &raw * (0.9 / operator_norm(&raw));

    for c in [
        DMatrix::identity(n, n),
        DMatrix::zeros(n, n),
        contraction,
    ] {
        let residual = op.commutation_residual(&c, &cells, 4).unwrap();
        assert!(residual < 1e-8, "commutation residual {residual}");
    }
}

#[test]
fn conditional_projector_commutes_with_paired_integral() {
    // The same commutation on the two-component space, with the conditional
    // projector as transport and the first-component Brownian rows embedded
    // in the 2n coordinates.
    let model =
        CovModel::build(TimeGrid::unit(4), &CrossCovarianceSpec::Scalar { rho: 0.45 }).unwrap();
    let n = model.n();
    let dim = 2 * n;
    let grid = *model.grid();

    // w1 rows in whitened coordinates.
    let mut rows = DMatrix::zeros(n + 1, dim);
    for t in 0..=n {
        let coords = model.s_half() * model.indicator_coords(0, t);
        rows.row_mut(t).copy_from(&coords.transpose());
    }
    let process = IntegratorProcess::from_rows(grid, rows).unwrap();
    let op = Gsro::from_integrator(&process);

    // Adapted cells: 1 + w1(t_k) as functionals of the whitened coordinates.
    let mut cells = Vec::with_capacity(n);
    for k in 0..n {
        let coords = model.s_half() * model.indicator_coords(0, k);
        let mut cell = ChaosVector::constant(dim, 1.0);
        cell.axpy(1.0, &ChaosVector::first_chaos(&coords));
        cells.push(cell);
    }

    let pi = model.conditional_projector();
    let residual = op.commutation_residual(&pi, &cells, 3).unwrap();
    assert!(residual < 1e-8, "projector commutation residual {residual}");
}

#[test]
fn transported_brownian_stays_an_integrator() {
    let grid = TimeGrid::unit(12);
    let brownian = IntegratorProcess::brownian(grid);
    assert!((brownian.bound_constant() - 1.0).abs() < 1e-10);

    for seed in 0..10u64 {
        let mut r = rng::stream(401, seed);
        let n = grid.steps();
        let raw = DMatrix::from_fn(n, n, |_, _| rng::normal_vector(&mut r, 1)[0]);
        let scale: f64 = 0.2 + 0.8 * (seed as f64 / 10.0);
        let c = &raw * (scale / operator_norm(&raw));
        let moved = brownian.second_quantized(&c).unwrap();
        let constant = moved.bound_constant();
        assert!(
            constant <= 1.0 + 1e-10,
            "transported constant {constant} exceeds one"
        );
    }
}

#[test]
fn trial_quotients_never_beat_the_sharp_constant() {
    let grid = TimeGrid::unit(16);
    for process in [
        IntegratorProcess::brownian(grid),
        FbmKernel::new(grid, 0.75).unwrap().integrator(),
    ] {
        let report = process.bound_report(200, 7);
        assert!(
            report.trial_max <= report.optimal_constant + 1e-12,
            "trial {} exceeded sharp constant {}",
            report.trial_max,
            report.optimal_constant
        );
    }
}

#[test]
fn deterministic_integral_matches_gram_variance() {
    let grid = TimeGrid::unit(10);
    let kernel = FbmKernel::new(grid, 0.6).unwrap();
    let process = kernel.integrator();
    let mut r = rng::stream(55, 0);
    let a = rng::normal_vector(&mut r, grid.steps());
    let integral = process.integral_deterministic(&a).unwrap();
    let gram = process.gram();
    let expect = (&gram * &a).dot(&a);
    assert!(
        (integral.variance() - expect).abs() < 1e-10,
        "variance {} vs quadratic form {expect}",
        integral.variance()
    );
}
