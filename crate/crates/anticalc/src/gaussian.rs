//! Two-component Gaussian coordinate model on a time grid.
//!
//! Two coupled Wiener paths are reduced to the vector `xi` of normalized
//! increments (`Delta w / sqrt(dt)`), with block covariance
//! `S = [[I, V], [V^T, I]]`. The model holds `S` together with its symmetric
//! square root and the inverses, mediates between physical coordinates `xi`
//! and whitened coordinates `z = S^(-1/2) xi`, and exposes the conditional
//! structure of the first path given the second (projector, regression,
//! conditional sampling).

use crate::chaos::{Basis, ChaosVector, VectorChaos};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{max_abs_diff, operator_norm, sym_sqrt_pair};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Cross-covariance between the two increment blocks.
#[derive(Clone, Debug)]
pub enum CrossCovarianceSpec {
    /// Independent components, `V = 0`.
    Zero,
    /// Constant pointwise correlation, `V = rho I`.
    Scalar { rho: f64 },
    /// Causal (lower-triangular) coupling `V[i, j] = level * dt` for `j <= i`.
    VolterraConstant { level: f64 },
    /// Causal coupling `V[i, j] = amplitude * exp(-rate (t_i - t_j)) * dt`
    /// for `j <= i`.
    VolterraExponential { amplitude: f64, rate: f64 },
    /// Explicit cross block (must keep the joint covariance positive).
    Custom(DMatrix<f64>),
}

impl CrossCovarianceSpec {
    fn build_v(&self, grid: &TimeGrid) -> Result<DMatrix<f64>> {
        let n = grid.steps();
        let dt = grid.dt();
        let m = match self {
            CrossCovarianceSpec::Zero => DMatrix::zeros(n, n),
            CrossCovarianceSpec::Scalar { rho } => {
                if rho.abs() >= 1.0 {
                    return Err(Error::CrossCovarianceTooStrong(rho.abs()));
                }
                DMatrix::identity(n, n) * *rho
            }
            CrossCovarianceSpec::VolterraConstant { level } => {
                DMatrix::from_fn(n, n, |i, j| if j <= i { level * dt } else { 0.0 })
            }
            CrossCovarianceSpec::VolterraExponential { amplitude, rate } => {
                DMatrix::from_fn(n, n, |i, j| {
                    if j <= i {
                        let lag = (i - j) as f64 * dt;
                        amplitude * (-rate * lag).exp() * dt
                    } else {
                        0.0
                    }
                })
            }
            CrossCovarianceSpec::Custom(v) => {
                if v.nrows() != n || v.ncols() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: v.nrows(),
                    });
                }
                v.clone()
            }
        };
        Ok(m)
    }
}

/// The assembled covariance model.
#[derive(Clone, Debug)]
pub struct CovModel {
    grid: TimeGrid,
    v: DMatrix<f64>,
    s: DMatrix<f64>,
    s_half: DMatrix<f64>,
    s_half_inv: DMatrix<f64>,
    s_inv: DMatrix<f64>,
}

impl CovModel {
    pub fn build(grid: TimeGrid, spec: &CrossCovarianceSpec) -> Result<Self> {
        let n = grid.steps();
        let v = spec.build_v(&grid)?;
        let vnorm = operator_norm(&v);
        if vnorm >= 1.0 - 1e-9 {
            return Err(Error::CrossCovarianceTooStrong(vnorm));
        }
        let dim = 2 * n;
        let mut s = DMatrix::identity(dim, dim);
        s.view_mut((0, n), (n, n)).copy_from(&v);
        s.view_mut((n, 0), (n, n)).copy_from(&v.transpose());
        let (s_half, s_half_inv) = sym_sqrt_pair(&s)?;
        let recon = max_abs_diff(&(&s_half * &s_half), &s);
        if recon > 1e-10 {
            return Err(Error::DegenerateCovariance(format!(
                "square-root reconstruction residual {recon:.3e}"
            )));
        }
        let s_inv = &s_half_inv * &s_half_inv;
        Ok(Self {
            grid,
            v,
            s,
            s_half,
            s_half_inv,
            s_inv,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Number of time cells per component.
    pub fn n(&self) -> usize {
        self.grid.steps()
    }

    /// Joint coordinate dimension `2n`.
    pub fn dim(&self) -> usize {
        2 * self.n()
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn s_half(&self) -> &DMatrix<f64> {
        &self.s_half
    }

    pub fn s_half_inv(&self) -> &DMatrix<f64> {
        &self.s_half_inv
    }

    pub fn s_inv(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    /// Physical coordinates of the path value `w_block(t_index)`:
    /// `sqrt(dt)` on the first `t_index` cells of the chosen block.
    pub fn indicator_coords(&self, block: usize, t_index: usize) -> DVector<f64> {
        assert!(block < 2 && t_index <= self.n());
        let n = self.n();
        let mut c = DVector::zeros(2 * n);
        for i in 0..t_index {
            c[block * n + i] = self.grid.sqrt_dt();
        }
        c
    }

    /// Draw a coordinate sample from stream `index` of `seed`.
    pub fn sample_pair(&self, seed: u64, index: u64) -> NoiseSample {
        let mut r = rng::stream(seed, index);
        let xi_prime = rng::normal_vector(&mut r, self.dim());
        self.sample_from_whitened(xi_prime)
    }

    pub fn sample_from_whitened(&self, xi_prime: DVector<f64>) -> NoiseSample {
        let xi = &self.s_half * &xi_prime;
        let (w1, w2) = self.paths_from_xi(&xi);
        NoiseSample {
            xi_prime,
            xi,
            w1,
            w2,
        }
    }

    fn paths_from_xi(&self, xi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let sdt = self.grid.sqrt_dt();
        let mut w1 = DVector::zeros(n + 1);
        let mut w2 = DVector::zeros(n + 1);
        for i in 0..n {
            w1[i + 1] = w1[i] + sdt * xi[i];
            w2[i + 1] = w2[i] + sdt * xi[n + i];
        }
        (w1, w2)
    }

    /// Rebuild the coordinate representation from a pair of paths sampled on
    /// the grid (length `n + 1`, starting at zero).
    pub fn from_paths(&self, w1: &DVector<f64>, w2: &DVector<f64>) -> Result<NoiseSample> {
        let n = self.n();
        if w1.len() != n + 1 || w2.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                got: w1.len(),
            });
        }
        let sdt = self.grid.sqrt_dt();
        let mut xi = DVector::zeros(2 * n);
        for i in 0..n {
            xi[i] = (w1[i + 1] - w1[i]) / sdt;
            xi[n + i] = (w2[i + 1] - w2[i]) / sdt;
        }
        let xi_prime = &self.s_half_inv * &xi;
        let (r1, r2) = self.paths_from_xi(&xi);
        Ok(NoiseSample {
            xi_prime,
            xi,
            w1: r1,
            w2: r2,
        })
    }

    /// Orthogonal projector (in whitened coordinates) onto the closed span of
    /// the second path's functionals; second quantization of this matrix is
    /// the conditional expectation given the second path.
    ///
    /// The columns `B = S^(1/2)[:, n..]` are orthonormal because the lower
    /// diagonal block of `S` is the identity, so the projector is `B B^T`.
    pub fn conditional_projector(&self) -> DMatrix<f64> {
        let n = self.n();
        let b = self.s_half.columns(n, n);
        &b * b.transpose()
    }

    /// Condition a chaos expansion on the second path.
    pub fn project_observable(&self, alpha: &ChaosVector) -> Result<ChaosVector> {
        alpha.second_quantization(&self.conditional_projector())
    }

    /// Whitened-coordinate representations of `gamma(t) = E[w1(t) | w2]` for
    /// every grid point; row `t` applies to the whitened vector.
    pub fn regress_gamma(&self) -> DMatrix<f64> {
        let n = self.n();
        let pi = self.conditional_projector();
        let mut rows = DMatrix::zeros(n + 1, 2 * n);
        for t in 0..=n {
            let c = self.indicator_coords(0, t);
            let r = &pi * (&self.s_half * c);
            rows.row_mut(t).copy_from(&r.transpose());
        }
        rows
    }

    /// Coordinate point reproducing every second-path-measurable chaos value:
    /// the conditional mean of the whitened vector given the second block.
    pub fn observation_point(&self, xi2: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        if xi2.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: xi2.len(),
            });
        }
        let mut stacked = DVector::zeros(2 * n);
        stacked.rows_mut(0, n).copy_from(&(&self.v * xi2));
        stacked.rows_mut(n, n).copy_from(xi2);
        Ok(&self.s_half_inv * stacked)
    }

    /// Residual of the prefix-commutation property
    /// `P_t S = P_t S P_t` at a grid index, where `P_t` keeps the first `t`
    /// cells of both blocks. Zero exactly when the cross block commutes with
    /// the time cut (e.g. diagonal `V`); causal kernels leave a residual.
    pub fn prefix_residual(&self, t_index: usize) -> f64 {
        let n = self.n();
        assert!(t_index <= n);
        let mut p = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..t_index {
            p[(i, i)] = 1.0;
            p[(n + i, n + i)] = 1.0;
        }
        let ps = &p * &self.s;
        let psp = &ps * &p;
        operator_norm(&(ps - psp))
    }

    /// Physical-coordinate derivative field `S^(1/2) D alpha` of a chaos
    /// expansion (the gradient paired against increment coordinates).
    pub fn derivative_physical(&self, alpha: &ChaosVector) -> Result<VectorChaos> {
        alpha.derivative().map_matrix(&self.s_half, Basis::Physical)
    }

    /// Conditional law of the first increment block given the second.
    pub fn conditional_law(&self) -> Result<ConditionalLaw> {
        ConditionalLaw::new(self)
    }
}

/// One joint draw in every coordinate system, plus the integrated paths
/// (length `n + 1`, starting at zero).
#[derive(Clone, Debug)]
pub struct NoiseSample {
    pub xi_prime: DVector<f64>,
    pub xi: DVector<f64>,
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
}

impl NoiseSample {
    pub fn xi1(&self) -> DVector<f64> {
        let n = self.xi.len() / 2;
        self.xi.rows(0, n).into_owned()
    }

    pub fn xi2(&self) -> DVector<f64> {
        let n = self.xi.len() / 2;
        self.xi.rows(n, n).into_owned()
    }
}

/// Gaussian law of `xi1` given `xi2`: mean `V xi2`, covariance `I - V V^T`.
#[derive(Clone, Debug)]
pub struct ConditionalLaw {
    v: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl ConditionalLaw {
    pub fn new(model: &CovModel) -> Result<Self> {
        let n = model.n();
        let cov = DMatrix::identity(n, n) - model.v() * model.v().transpose();
        let chol = nalgebra::Cholesky::new(cov)
            .ok_or_else(|| {
                Error::DegenerateCovariance("conditional covariance not positive".into())
            })?
            .l();
        Ok(Self {
            v: model.v().clone(),
            chol,
        })
    }

    pub fn mean(&self, xi2: &DVector<f64>) -> DVector<f64> {
        &self.v * xi2
    }

    pub fn sample<R: Rng>(&self, xi2: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let g = rng::normal_vector(rng, xi2.len());
        self.mean(xi2) + &self.chol * g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_model(n: usize, rho: f64) -> CovModel {
        CovModel::build(TimeGrid::unit(n), &CrossCovarianceSpec::Scalar { rho }).unwrap()
    }

    #[test]
    fn scalar_projector_matches_closed_form() {
        let rho: f64 = 0.5;
        let m = scalar_model(3, rho);
        let a = ((1.0 + rho).sqrt() + (1.0 - rho).sqrt()) / 2.0;
        let b = ((1.0 + rho).sqrt() - (1.0 - rho).sqrt()) / 2.0;
        let pi = m.conditional_projector();
        let n = 3;
        for i in 0..n {
            assert_abs_diff_eq!(pi[(i, i)], b * b, epsilon = 1e-12);
            assert_abs_diff_eq!(pi[(i, n + i)], a * b, epsilon = 1e-12);
            assert_abs_diff_eq!(pi[(n + i, n + i)], a * a, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(2.0 * a * b, rho, epsilon = 1e-12);
    }

    #[test]
    fn projector_is_idempotent_and_symmetric() {
        let m = CovModel::build(
            TimeGrid::unit(4),
            &CrossCovarianceSpec::VolterraExponential {
                amplitude: 0.8,
                rate: 1.5,
            },
        )
        .unwrap();
        let pi = m.conditional_projector();
        assert!(max_abs_diff(&(&pi * &pi), &pi) < 1e-11);
        assert!(max_abs_diff(&pi.transpose(), &pi) < 1e-12);
    }

    #[test]
    fn round_trip_paths_to_coordinates() {
        let m = scalar_model(5, -0.4);
        let s = m.sample_pair(11, 0);
        let back = m.from_paths(&s.w1, &s.w2).unwrap();
        for i in 0..m.dim() {
            assert_abs_diff_eq!(back.xi_prime[i], s.xi_prime[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn prefix_residual_vanishes_for_diagonal_cross_block() {
        let m = scalar_model(4, 0.6);
        for t in 0..=4 {
            assert!(m.prefix_residual(t) < 1e-12);
        }
    }

    #[test]
    fn prefix_residual_positive_for_causal_kernel() {
        let m = CovModel::build(
            TimeGrid::unit(4),
            &CrossCovarianceSpec::VolterraConstant { level: 0.9 },
        )
        .unwrap();
        assert!(m.prefix_residual(2) > 1e-4);
    }

    #[test]
    fn observation_point_reproduces_second_path_values() {
        let m = CovModel::build(
            TimeGrid::unit(4),
            &CrossCovarianceSpec::VolterraExponential {
                amplitude: 0.7,
                rate: 2.0,
            },
        )
        .unwrap();
        let s = m.sample_pair(5, 3);
        let z_star = m.observation_point(&s.xi2()).unwrap();
        // w2(t) is measurable: its chaos evaluated at z_star equals the path.
        for t in 1..=4 {
            let phi = &m.s_half * m.indicator_coords(1, t);
            let chaos = ChaosVector::first_chaos(&phi);
            assert_abs_diff_eq!(chaos.evaluate(&z_star), s.w2[t], epsilon = 1e-10);
        }
        // the projector fixes z_star
        let pi = m.conditional_projector();
        let proj = &pi * &z_star;
        for i in 0..m.dim() {
            assert_abs_diff_eq!(proj[i], z_star[i], epsilon = 1e-11);
        }
    }

    #[test]
    fn regress_gamma_scalar_case_is_rho_w2() {
        let rho = 0.5;
        let m = scalar_model(4, rho);
        let rows = m.regress_gamma();
        let s = m.sample_pair(2, 7);
        for t in 0..=4 {
            let gamma_t: f64 = rows.row(t).transpose().dot(&s.xi_prime);
            assert_abs_diff_eq!(gamma_t, rho * s.w2[t], epsilon = 1e-10);
        }
    }

    #[test]
    fn conditional_law_matches_schur_complement() {
        let m = scalar_model(3, 0.8);
        let law = m.conditional_law().unwrap();
        let xi2 = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let mean = law.mean(&xi2);
        for i in 0..3 {
            assert_abs_diff_eq!(mean[i], 0.8 * xi2[i], epsilon = 1e-12);
        }
        // covariance of samples approaches I - V V^T = 0.36 I
        let mut r = rng::stream(3, 0);
        let mut acc = 0.0;
        let reps = 4000;
        for _ in 0..reps {
            let x = law.sample(&xi2, &mut r);
            acc += (x[0] - mean[0]) * (x[0] - mean[0]);
        }
        assert_abs_diff_eq!(acc / reps as f64, 0.36, epsilon = 0.05);
    }

    #[test]
    fn rejects_strong_cross_covariance() {
        let err = CovModel::build(TimeGrid::unit(3), &CrossCovarianceSpec::Scalar { rho: 1.0 });
        assert!(matches!(err, Err(Error::CrossCovarianceTooStrong(_))));
    }
}
