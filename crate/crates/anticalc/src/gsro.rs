//! Random linear operators with one stochastic-integration slot, and
//! integrator processes for extended (anticipating) stochastic integrals.
//!
//! A strong random operator here is `A = alpha0 + alpha1` where `alpha0` is a
//! plain matrix and `alpha1[h, p, j]` pairs input slot `p` with noise
//! coordinate `j` for output `h`: applied to a deterministic vector `x`,
//! output `h` is `(alpha0 x)_h + <y_h, z>` with `y_h[j] = sum_p
//! alpha1[h,p,j] x_p`. Random (chaos-valued) inputs enter through the Wick
//! product, which makes the operator commute with second quantization after
//! contracting the noise slot.

use crate::chaos::ChaosVector;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Dense three-index array, layout `[out][input][noise]`.
#[derive(Clone, Debug)]
pub struct Tensor3 {
    out_dim: usize,
    in_dim: usize,
    noise_dim: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(out_dim: usize, in_dim: usize, noise_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            noise_dim,
            data: vec![0.0; out_dim * in_dim * noise_dim],
        }
    }

    pub fn from_fn(
        out_dim: usize,
        in_dim: usize,
        noise_dim: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(out_dim, in_dim, noise_dim);
        for h in 0..out_dim {
            for p in 0..in_dim {
                for j in 0..noise_dim {
                    let v = f(h, p, j);
                    t.set(h, p, j, v);
                }
            }
        }
        t
    }

    #[inline]
    fn idx(&self, h: usize, p: usize, j: usize) -> usize {
        (h * self.in_dim + p) * self.noise_dim + j
    }

    #[inline]
    pub fn get(&self, h: usize, p: usize, j: usize) -> f64 {
        self.data[self.idx(h, p, j)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, p: usize, j: usize, v: f64) {
        let i = self.idx(h, p, j);
        self.data[i] = v;
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.out_dim, self.in_dim, self.noise_dim)
    }
}

/// Strong random operator `alpha0 + alpha1` (see module docs).
#[derive(Clone, Debug)]
pub struct Gsro {
    alpha0: DMatrix<f64>,
    alpha1: Tensor3,
}

impl Gsro {
    pub fn new(alpha0: DMatrix<f64>, alpha1: Tensor3) -> Result<Self> {
        let (o, i, _) = alpha1.dims();
        if alpha0.nrows() != o || alpha0.ncols() != i {
            return Err(Error::DimensionMismatch {
                expected: o,
                got: alpha0.nrows(),
            });
        }
        Ok(Self { alpha0, alpha1 })
    }

    pub fn out_dim(&self) -> usize {
        self.alpha1.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.alpha1.in_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.alpha1.noise_dim
    }

    pub fn alpha0(&self) -> &DMatrix<f64> {
        &self.alpha0
    }

    pub fn alpha1(&self) -> &Tensor3 {
        &self.alpha1
    }

    /// Triple-kernel integral operator on a grid: output `h` lives at grid
    /// point `t_(h+1)`, the input is sampled at cell midpoints, the noise
    /// slot integrates against the increments of the driving path, so
    /// `alpha1[h,p,j] = k(t_(h+1), tau_p, s_j) dt^(3/2)` (midpoint `tau`, `s`).
    pub fn from_kernel(grid: &TimeGrid, kernel: impl Fn(f64, f64, f64) -> f64) -> Self {
        let n = grid.steps();
        let dt = grid.dt();
        let scale = dt * grid.sqrt_dt();
        let mid = |p: usize| (p as f64 + 0.5) * dt;
        let alpha1 = Tensor3::from_fn(n, n, n, |h, p, j| {
            kernel(grid.point(h + 1), mid(p), mid(j)) * scale
        });
        Self {
            alpha0: DMatrix::zeros(n, n),
            alpha1,
        }
    }

    /// Integration against an integrator process: output `h` is the extended
    /// integral of the input (as cell values) up to grid point `h`, i.e.
    /// `alpha1[h,p,j] = 1_(p < h) (Delta c_p)[j]`.
    pub fn from_integrator(process: &IntegratorProcess) -> Self {
        let n = process.grid().steps();
        let noise = process.noise_dim();
        let incs = process.increments();
        let alpha1 = Tensor3::from_fn(n + 1, n, noise, |h, p, j| {
            if p < h {
                incs[p][j]
            } else {
                0.0
            }
        });
        Self {
            alpha0: DMatrix::zeros(n + 1, n),
            alpha1,
        }
    }

    /// Output expansions for a deterministic input vector (degree <= 1).
    pub fn apply_deterministic(&self, x: &DVector<f64>) -> Result<Vec<ChaosVector>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mean = &self.alpha0 * x;
        let mut out = Vec::with_capacity(self.out_dim());
        for h in 0..self.out_dim() {
            let mut row = DVector::zeros(self.noise_dim());
            for j in 0..self.noise_dim() {
                let mut acc = 0.0;
                for p in 0..self.in_dim() {
                    acc += self.alpha1.get(h, p, j) * x[p];
                }
                row[j] = acc;
            }
            let mut c = ChaosVector::first_chaos(&row);
            c.coeff_mut(0).data_mut()[0] = mean[h];
            out.push(c);
        }
        Ok(out)
    }

    /// Output expansions for chaos-valued inputs; the noise slot couples by
    /// Wick product, `out_h = sum_p alpha0[h,p] a_p + sum_j (y_hj (w) z_j)`
    /// with `y_hj = sum_p alpha1[h,p,j] a_p`, truncated at `max_degree`.
    pub fn apply_chaos(&self, inputs: &[ChaosVector], max_degree: usize) -> Result<Vec<ChaosVector>> {
        if inputs.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: inputs.len(),
            });
        }
        let dim = inputs
            .first()
            .map(|c| c.dim())
            .unwrap_or(self.noise_dim());
        if dim != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.noise_dim(),
                got: dim,
            });
        }
        let mut out = Vec::with_capacity(self.out_dim());
        for h in 0..self.out_dim() {
            let mut acc = ChaosVector::zeros(dim, max_degree)?;
            for p in 0..self.in_dim() {
                let w = self.alpha0[(h, p)];
                if w != 0.0 {
                    acc.axpy(w, &inputs[p]);
                }
            }
            for j in 0..dim {
                let mut y = ChaosVector::zeros(dim, max_degree)?;
                let mut any = false;
                for p in 0..self.in_dim() {
                    let w = self.alpha1.get(h, p, j);
                    if w != 0.0 {
                        y.axpy(w, &inputs[p]);
                        any = true;
                    }
                }
                if !any {
                    continue;
                }
                let mut e = DVector::zeros(dim);
                e[j] = 1.0;
                let zj = ChaosVector::first_chaos(&e);
                acc.axpy(1.0, &y.wick(&zj, max_degree)?);
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Contract the noise slot with `c`: the operator that matches
    /// second-quantizing the output, `alpha1'[h,p,j] = sum_i alpha1[h,p,i] c[i,j]`.
    pub fn contract_noise(&self, c: &DMatrix<f64>) -> Result<Gsro> {
        let noise = self.noise_dim();
        if c.nrows() != noise || c.ncols() != noise {
            return Err(Error::DimensionMismatch {
                expected: noise,
                got: c.nrows(),
            });
        }
        let alpha1 = Tensor3::from_fn(self.out_dim(), self.in_dim(), noise, |h, p, j| {
            (0..noise)
                .map(|i| self.alpha1.get(h, p, i) * c[(i, j)])
                .sum()
        });
        Ok(Gsro {
            alpha0: self.alpha0.clone(),
            alpha1,
        })
    }

    /// Largest L2 mismatch between `Gamma(c) (A inputs)` and
    /// `(A with contracted noise)(Gamma(c) inputs)` over output slots.
    pub fn commutation_residual(
        &self,
        c: &DMatrix<f64>,
        inputs: &[ChaosVector],
        max_degree: usize,
    ) -> Result<f64> {
        let lhs: Vec<ChaosVector> = self
            .apply_chaos(inputs, max_degree)?
            .iter()
            .map(|o| o.second_quantization(c))
            .collect::<Result<Vec<_>>>()?;
        let gamma_inputs: Vec<ChaosVector> = inputs
            .iter()
            .map(|a| a.second_quantization(c))
            .collect::<Result<Vec<_>>>()?;
        let rhs = self.contract_noise(c)?.apply_chaos(&gamma_inputs, max_degree)?;
        let mut worst = 0.0f64;
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            worst = worst.max(l.sub(r).norm_sq().sqrt());
        }
        Ok(worst)
    }
}

/// A Gaussian process given by whitened coordinates of its value at every
/// grid point (row `t` represents `gamma(t_t)` as a linear functional).
#[derive(Clone, Debug)]
pub struct IntegratorProcess {
    grid: TimeGrid,
    rows: DMatrix<f64>,
}

/// Outcome of the integrator-constant check: the sharp constant
/// `lambda_max(G)/dt` against the largest Rayleigh quotient seen in trials.
#[derive(Clone, Copy, Debug)]
pub struct BoundReport {
    pub optimal_constant: f64,
    pub trial_max: f64,
    pub trials: usize,
}

impl IntegratorProcess {
    /// `rows` must have one row per grid point (`steps + 1`).
    pub fn from_rows(grid: TimeGrid, rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() != grid.steps() + 1 {
            return Err(Error::DimensionMismatch {
                expected: grid.steps() + 1,
                got: rows.nrows(),
            });
        }
        Ok(Self { grid, rows })
    }

    /// The driving path itself: staircase of `sqrt(dt)` indicators.
    pub fn brownian(grid: TimeGrid) -> Self {
        let n = grid.steps();
        let sdt = grid.sqrt_dt();
        let rows = DMatrix::from_fn(n + 1, n, |t, j| if j < t { sdt } else { 0.0 });
        Self { grid, rows }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise_dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Image under second quantization by `c` (whitened coordinates map by
    /// `c^T`).
    pub fn second_quantized(&self, c: &DMatrix<f64>) -> Result<Self> {
        if c.nrows() != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.noise_dim(),
                got: c.nrows(),
            });
        }
        Ok(Self {
            grid: self.grid,
            rows: &self.rows * c,
        })
    }

    pub fn increments(&self) -> Vec<DVector<f64>> {
        (0..self.grid.steps())
            .map(|k| (self.rows.row(k + 1) - self.rows.row(k)).transpose())
            .collect()
    }

    /// Gram matrix of the increments.
    pub fn gram(&self) -> DMatrix<f64> {
        let incs = self.increments();
        let n = incs.len();
        DMatrix::from_fn(n, n, |k, l| incs[k].dot(&incs[l]))
    }

    /// Sharp constant in `E (sum_k a_k Delta gamma_k)^2 <= C sum_k a_k^2 dt`
    /// over deterministic integrands.
    pub fn bound_constant(&self) -> f64 {
        let g = self.gram();
        let eig = SymmetricEigen::new(g);
        eig.eigenvalues.iter().cloned().fold(0.0, f64::max) / self.grid.dt()
    }

    /// Extended integral of deterministic cell values (degree-1 output).
    pub fn integral_deterministic(&self, a: &DVector<f64>) -> Result<ChaosVector> {
        if a.len() != self.grid.steps() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.steps(),
                got: a.len(),
            });
        }
        let incs = self.increments();
        let mut row = DVector::zeros(self.noise_dim());
        for (k, inc) in incs.iter().enumerate() {
            row += inc * a[k];
        }
        Ok(ChaosVector::first_chaos(&row))
    }

    /// Extended (Wick/Skorokhod) integral of chaos-valued cell integrands:
    /// `sum_k a_k (w) <Delta c_k, z>`, truncated at `max_degree`.
    pub fn integral_chaos(&self, integrands: &[ChaosVector], max_degree: usize) -> Result<ChaosVector> {
        if integrands.len() != self.grid.steps() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.steps(),
                got: integrands.len(),
            });
        }
        let dim = self.noise_dim();
        let incs = self.increments();
        let mut acc = ChaosVector::zeros(dim, max_degree)?;
        for (k, a) in integrands.iter().enumerate() {
            if a.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: a.dim(),
                });
            }
            let inc_chaos = ChaosVector::first_chaos(&incs[k]);
            acc.axpy(1.0, &a.wick(&inc_chaos, max_degree)?);
        }
        Ok(acc)
    }

    /// Probe the sharp constant with random deterministic integrands:
    /// Rayleigh quotients `a^T G a / (dt |a|^2)` never exceed the optimum.
    pub fn bound_report(&self, trials: usize, seed: u64) -> BoundReport {
        let g = self.gram();
        let n = g.nrows();
        let dt = self.grid.dt();
        let mut trial_max = 0.0f64;
        for t in 0..trials {
            let mut r = rng::stream(seed, t as u64);
            let a = rng::normal_vector(&mut r, n);
            let q = (&g * &a).dot(&a) / (dt * a.norm_squared());
            trial_max = trial_max.max(q);
        }
        BoundReport {
            optimal_constant: self.bound_constant(),
            trial_max,
            trials,
        }
    }
}
