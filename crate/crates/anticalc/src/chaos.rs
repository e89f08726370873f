//! Hermite chaos expansions of random variables over a finite Gaussian
//! coordinate system.
//!
//! A scalar variable is represented as `alpha = sum_k <A_k, :z^(x)k:>` where
//! `z` is a standard Gaussian vector, `:z^(x)k:` the Wick power whose
//! coordinate functions are products of probabilists' Hermite polynomials,
//! and `A_k` a symmetric coefficient tensor ([`crate::sym::SymTensor`]).
//! All second moments, products, derivative/divergence operators and second
//! quantization act on the coefficient tensors alone.

use crate::error::{Error, Result};
use crate::linalg::operator_norm;
use crate::rng;
use crate::sym::{self, count_multisets, factorial, multiplicities, HermiteTable, SymTensor};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Coordinate system a vector field is expressed in: the whitened Gaussian
/// coordinates (identity covariance) or the physical increment coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Whitened,
    Physical,
}

/// Fail early when a compressed layout would exceed the entry cap.
pub fn check_capacity(dim: usize, degree: usize) -> Result<()> {
    let n = count_multisets(dim, degree);
    if n > sym::MAX_ENTRIES {
        return Err(Error::TensorTooLarge(n));
    }
    Ok(())
}

/// Chaos expansion of a scalar random variable, truncated at a top degree.
#[derive(Clone, Debug)]
pub struct ChaosVector {
    dim: usize,
    coeffs: Vec<SymTensor>,
}

/// Mass bookkeeping for a truncation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TruncationReport {
    pub kept_degree: usize,
    pub kept_norm_sq: f64,
    pub dropped_norm_sq: f64,
}

impl ChaosVector {
    pub fn zeros(dim: usize, max_degree: usize) -> Result<Self> {
        check_capacity(dim, max_degree)?;
        let coeffs = (0..=max_degree).map(|k| SymTensor::zeros(dim, k)).collect();
        Ok(Self { dim, coeffs })
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        let mut c = Self::zeros(dim, 0).expect("degree-0 layout always fits");
        c.coeffs[0].data_mut()[0] = value;
        c
    }

    /// The linear functional `<phi, z>` as a degree-1 expansion.
    pub fn first_chaos(phi: &DVector<f64>) -> Self {
        Self {
            dim: phi.len(),
            coeffs: vec![SymTensor::scalar(phi.len(), 0.0), SymTensor::from_vector(phi)],
        }
    }

    /// Truncated exponential vector with kernels `phi^(x)k / k!`; second value
    /// is the L2 mass of the dropped tail, `e^(|phi|^2) - sum_{k<=K} |phi|^(2k)/k!`.
    pub fn exp_vector(phi: &DVector<f64>, max_degree: usize) -> Result<(Self, f64)> {
        let dim = phi.len();
        check_capacity(dim, max_degree)?;
        let mut coeffs = Vec::with_capacity(max_degree + 1);
        coeffs.push(SymTensor::scalar(dim, 1.0));
        for k in 1..=max_degree {
            // phi^(x)k / k! built entrywise: value = prod(phi_i) / k!.
            let mut t = SymTensor::zeros(dim, k);
            let space = t.space().clone();
            for (idx, tuple) in space.tuples().iter().enumerate() {
                let prod: f64 = tuple.iter().map(|&i| phi[i as usize]).product();
                t.data_mut()[idx] = prod / factorial(k);
            }
            coeffs.push(t);
        }
        let ns = phi.norm_squared();
        let mut partial = 0.0;
        for k in 0..=max_degree {
            partial += ns.powi(k as i32) / factorial(k);
        }
        let tail = (ns.exp() - partial).max(0.0);
        Ok((Self { dim, coeffs }, tail))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, degree: usize) -> &SymTensor {
        &self.coeffs[degree]
    }

    pub fn coeff_mut(&mut self, degree: usize) -> &mut SymTensor {
        &mut self.coeffs[degree]
    }

    /// Grow (with zero layers) so that degree `k` exists.
    pub fn ensure_degree(&mut self, k: usize) -> Result<()> {
        check_capacity(self.dim, k)?;
        while self.coeffs.len() <= k {
            self.coeffs.push(SymTensor::zeros(self.dim, self.coeffs.len()));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].data()[0]
    }

    /// Second moment `E alpha^2 = sum_k k! |A_k|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| factorial(k) * a.norm_sq())
            .sum()
    }

    /// L2 inner product `E (alpha beta) = sum_k k! <A_k, B_k>`.
    pub fn l2_inner(&self, other: &Self) -> f64 {
        let kmax = self.max_degree().min(other.max_degree());
        (0..=kmax)
            .map(|k| factorial(k) * self.coeffs[k].dot(&other.coeffs[k]))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        (self.norm_sq() - self.mean() * self.mean()).max(0.0)
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            c.scale(s);
        }
    }

    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        assert_eq!(self.dim, x.dim, "chaos dims must agree");
        self.ensure_degree(x.max_degree())
            .expect("existing layout fits");
        for (k, c) in x.coeffs.iter().enumerate() {
            self.coeffs[k].axpy(alpha, c);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Pathwise value at a standard-Gaussian coordinate point.
    pub fn evaluate(&self, z: &DVector<f64>) -> f64 {
        assert_eq!(z.len(), self.dim);
        let he = HermiteTable::new(z, self.max_degree());
        self.coeffs.iter().map(|c| c.evaluate(&he)).sum()
    }

    /// Drop layers above `max_degree` and report the removed mass.
    pub fn truncate(&self, max_degree: usize) -> (Self, TruncationReport) {
        let keep = max_degree.min(self.max_degree());
        let kept: Vec<SymTensor> = self.coeffs[..=keep].to_vec();
        let dropped: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .skip(keep + 1)
            .map(|(k, a)| factorial(k) * a.norm_sq())
            .sum();
        let out = Self {
            dim: self.dim,
            coeffs: kept,
        };
        let report = TruncationReport {
            kept_degree: keep,
            kept_norm_sq: out.norm_sq(),
            dropped_norm_sq: dropped,
        };
        (out, report)
    }

    /// Wick product, truncated at `max_degree`.
    pub fn wick(&self, other: &Self, max_degree: usize) -> Result<Self> {
        assert_eq!(self.dim, other.dim);
        let mut out = Self::zeros(self.dim, max_degree)?;
        for (j, a) in self.coeffs.iter().enumerate() {
            if a.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            for (k, b) in other.coeffs.iter().enumerate() {
                if j + k > max_degree {
                    break;
                }
                if b.data().iter().all(|&v| v == 0.0) {
                    continue;
                }
                let prod = a.sym_outer(b);
                out.coeffs[j + k].axpy(1.0, &prod);
            }
        }
        Ok(out)
    }

    /// Pointwise product through the contraction expansion
    /// `A_j . B_k = sum_r r! C(j,r) C(k,r) (A_j (x)_r B_k)`, truncated at
    /// `max_degree`.
    pub fn mul_pointwise(&self, other: &Self, max_degree: usize) -> Result<Self> {
        assert_eq!(self.dim, other.dim);
        let mut out = Self::zeros(self.dim, max_degree)?;
        for (j, a) in self.coeffs.iter().enumerate() {
            if a.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            for (k, b) in other.coeffs.iter().enumerate() {
                if b.data().iter().all(|&v| v == 0.0) {
                    continue;
                }
                for r in 0..=j.min(k) {
                    let g = j + k - 2 * r;
                    if g > max_degree {
                        continue;
                    }
                    let w = factorial(r) * sym::binomial_f64(j, r) * sym::binomial_f64(k, r);
                    let contracted = a.contract_r(b, r);
                    out.coeffs[g].axpy(w, &contracted);
                }
            }
        }
        Ok(out)
    }

    /// Coordinate derivative field `(D alpha)_h = d alpha / d z_h` in the
    /// whitened basis: layer k maps to `k * A_k(e_h, ..)` at degree `k - 1`.
    pub fn derivative(&self) -> VectorChaos {
        let kmax = self.max_degree();
        let out_deg = kmax.saturating_sub(1);
        let mut components = Vec::with_capacity(self.dim);
        for h in 0..self.dim {
            let mut comp = Self::zeros(self.dim, out_deg).expect("existing layout fits");
            for (k, a) in self.coeffs.iter().enumerate().skip(1) {
                let fixed = a.slot_fixed(h);
                comp.coeffs[k - 1].axpy(k as f64, &fixed);
            }
            components.push(comp);
        }
        VectorChaos {
            components,
            basis: Basis::Whitened,
        }
    }

    /// Second quantization `Gamma(C)`: contract every tensor slot with `C`.
    /// `C` must be a contraction (operator norm at most one).
    pub fn second_quantization(&self, c: &DMatrix<f64>) -> Result<Self> {
        let norm = operator_norm(c);
        if norm > 1.0 + 1e-10 {
            return Err(Error::NotAContraction(norm));
        }
        let coeffs = self
            .coeffs
            .iter()
            .map(|a| a.apply_contraction(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: self.dim,
            coeffs,
        })
    }

    /// Weighted sum of expansions sharing one coordinate system.
    pub fn linear_combine(terms: &[(f64, &ChaosVector)]) -> Result<Self> {
        let dim = terms.first().map(|(_, c)| c.dim()).unwrap_or(1);
        let deg = terms.iter().map(|(_, c)| c.max_degree()).max().unwrap_or(0);
        let mut out = Self::zeros(dim, deg)?;
        for &(w, c) in terms {
            out.axpy(w, c);
        }
        Ok(out)
    }

    pub fn to_dto(&self) -> ChaosVectorDto {
        ChaosVectorDto {
            dim: self.dim,
            layers: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| ChaosLayerDto {
                    degree: k,
                    values: a.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_dto(dto: &ChaosVectorDto) -> Result<Self> {
        let mut out = Self::zeros(dto.dim, dto.layers.len().saturating_sub(1))?;
        for layer in &dto.layers {
            if layer.degree >= out.coeffs.len() {
                return Err(Error::DimensionMismatch {
                    expected: out.coeffs.len(),
                    got: layer.degree + 1,
                });
            }
            let t = &mut out.coeffs[layer.degree];
            if t.data().len() != layer.values.len() {
                return Err(Error::DimensionMismatch {
                    expected: t.data().len(),
                    got: layer.values.len(),
                });
            }
            t.data_mut().copy_from_slice(&layer.values);
        }
        Ok(out)
    }
}

/// Serialized form of a chaos expansion. Within each layer, values follow
/// the colexicographic multiset order of the compressed symmetric layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChaosVectorDto {
    pub dim: usize,
    pub layers: Vec<ChaosLayerDto>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChaosLayerDto {
    pub degree: usize,
    pub values: Vec<f64>,
}

/// A coordinate-indexed family of chaos expansions (a discrete random field
/// over the Gaussian coordinates), tagged with its basis.
#[derive(Clone, Debug)]
pub struct VectorChaos {
    pub components: Vec<ChaosVector>,
    pub basis: Basis,
}

impl VectorChaos {
    pub fn zeros(dim: usize, max_degree: usize, basis: Basis) -> Result<Self> {
        let components = (0..dim)
            .map(|_| ChaosVector::zeros(dim, max_degree))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components, basis })
    }

    /// Deterministic field: component h is the constant `v[h]`.
    pub fn deterministic(v: &DVector<f64>, basis: Basis) -> Self {
        let components = v
            .iter()
            .map(|&x| ChaosVector::constant(v.len(), x))
            .collect();
        Self { components, basis }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn max_degree(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.max_degree())
            .max()
            .unwrap_or(0)
    }

    /// Componentwise linear recombination: `out_i = sum_j M[i,j] comp_j`.
    /// The caller decides what the result's basis is.
    pub fn map_matrix(&self, m: &DMatrix<f64>, basis: Basis) -> Result<Self> {
        let d = self.dim();
        if m.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.ncols(),
            });
        }
        let deg = self.max_degree();
        let mut components = Vec::with_capacity(m.nrows());
        for i in 0..m.nrows() {
            let mut acc = ChaosVector::zeros(self.components[0].dim(), deg)?;
            for j in 0..d {
                let w = m[(i, j)];
                if w != 0.0 {
                    acc.axpy(w, &self.components[j]);
                }
            }
            components.push(acc);
        }
        Ok(Self { components, basis })
    }

    /// Pairing with a deterministic vector: `sum_i v_i comp_i`.
    pub fn dot_deterministic(&self, v: &DVector<f64>) -> Result<ChaosVector> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        let terms: Vec<(f64, &ChaosVector)> = v
            .iter()
            .zip(self.components.iter())
            .map(|(&w, c)| (w, c))
            .collect();
        ChaosVector::linear_combine(&terms)
    }

    /// Skorokhod divergence of a whitened-basis field: layer k of component
    /// lists feeds layer k+1 of the output through symmetrized slot insertion.
    pub fn divergence(&self) -> Result<ChaosVector> {
        assert_eq!(
            self.basis,
            Basis::Whitened,
            "divergence is defined against whitened coordinates"
        );
        let d = self.dim();
        let ambient = self.components[0].dim();
        if ambient != d {
            return Err(Error::DimensionMismatch {
                expected: ambient,
                got: d,
            });
        }
        let kmax = self.max_degree();
        let mut out = ChaosVector::zeros(d, kmax + 1)?;
        for k in 0..=kmax {
            let g = k + 1;
            let out_layer = &mut out.coeffs[g];
            let space = out_layer.space().clone();
            for (idx, tuple) in space.tuples().iter().enumerate() {
                let mults = multiplicities(tuple);
                let mut acc = 0.0;
                for &(i, mu) in &mults {
                    let comp = &self.components[i as usize];
                    if k > comp.max_degree() {
                        continue;
                    }
                    // remove one copy of i
                    let mut rest = Vec::with_capacity(k);
                    let mut removed = false;
                    for &t in tuple.iter() {
                        if !removed && t == i {
                            removed = true;
                            continue;
                        }
                        rest.push(t);
                    }
                    acc += mu as f64 * comp.coeffs[k].get(&rest);
                }
                out_layer.data_mut()[idx] = acc / g as f64;
            }
        }
        Ok(out)
    }

    /// Pathwise values of every component at a coordinate point.
    pub fn evaluate(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.components.iter().map(|c| c.evaluate(z)))
    }

    /// Second quantization applied componentwise.
    pub fn second_quantization(&self, c: &DMatrix<f64>) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|x| x.second_quantization(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            basis: self.basis,
        })
    }
}

/// Monte Carlo chaos projection output.
pub struct ExpandOutput {
    pub chaos: ChaosVector,
    /// Largest standard error among estimated coefficients.
    pub max_se: f64,
    /// True when the sampled function was numerically constant.
    pub degenerate: bool,
}

/// Project a pathwise functional of a standard Gaussian vector onto chaos
/// layers up to `max_degree` by Monte Carlo: the coefficient at multiset m is
/// `E[f(z) prod_i He_mult(i)(z_i)] / k!`. Deterministic for fixed `seed`
/// regardless of thread count.
pub fn expand<F>(f: F, dim: usize, max_degree: usize, samples: usize, seed: u64) -> Result<ExpandOutput>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    check_capacity(dim, max_degree)?;
    let mut chaos = ChaosVector::zeros(dim, max_degree)?;
    let layout: Vec<_> = (0..=max_degree)
        .map(|k| chaos.coeffs[k].space().clone())
        .collect();
    let total: usize = layout.iter().map(|s| s.len()).sum();

    // Fixed-size sample chunks, each reduced sequentially inside one task,
    // then merged in chunk order.  Chunk boundaries depend on indices alone,
    // so the result is independent of scheduling and thread count, and the
    // memory footprint stays at (chunks x coefficients) instead of
    // (samples x coefficients).
    const CHUNK: usize = 2048;
    struct Partial {
        count: usize,
        mean: Vec<f64>,
        m2: Vec<f64>,
        fmean: f64,
        fm2: f64,
    }
    let chunk_count = samples.div_ceil(CHUNK);
    let partials: Vec<Partial> = rng::par_collect(chunk_count, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(samples);
        let mut part = Partial {
            count: 0,
            mean: vec![0.0; total],
            m2: vec![0.0; total],
            fmean: 0.0,
            fm2: 0.0,
        };
        let mut row = vec![0.0f64; total];
        for i in lo..hi {
            let mut r = rng::stream(seed, i as u64);
            let z = rng::normal_vector(&mut r, dim);
            let val = f(&z);
            let he = HermiteTable::new(&z, max_degree);
            let mut cursor = 0;
            for space in &layout {
                for tuple in space.tuples() {
                    let mut prod = 1.0;
                    let mut a = 0;
                    while a < tuple.len() {
                        let mut b = a;
                        while b < tuple.len() && tuple[b] == tuple[a] {
                            b += 1;
                        }
                        prod *= he.value(tuple[a] as usize, b - a);
                        a = b;
                    }
                    row[cursor] = val * prod;
                    cursor += 1;
                }
            }
            part.count += 1;
            let nf = part.count as f64;
            let dv = val - part.fmean;
            part.fmean += dv / nf;
            part.fm2 += dv * (val - part.fmean);
            for (j, &x) in row.iter().enumerate() {
                let d = x - part.mean[j];
                part.mean[j] += d / nf;
                part.m2[j] += d * (x - part.mean[j]);
            }
        }
        part
    });

    let m = samples as f64;
    let mut count = 0usize;
    let mut mean = vec![0.0f64; total];
    let mut m2 = vec![0.0f64; total];
    let mut fmean = 0.0;
    let mut fm2 = 0.0;
    for part in partials {
        if part.count == 0 {
            continue;
        }
        let na = count as f64;
        let nb = part.count as f64;
        let nab = na + nb;
        for j in 0..total {
            let delta = part.mean[j] - mean[j];
            mean[j] += delta * nb / nab;
            m2[j] += part.m2[j] + delta * delta * na * nb / nab;
        }
        let fd = part.fmean - fmean;
        fmean += fd * nb / nab;
        fm2 += part.fm2 + fd * fd * na * nb / nab;
        count += part.count;
    }
    let degenerate = fm2 / m < 1e-24;

    let mut max_se = 0.0f64;
    let mut cursor = 0;
    for k in 0..=max_degree {
        let inv_kfact = 1.0 / factorial(k);
        let layer = chaos.coeffs[k].data_mut();
        for v in layer.iter_mut() {
            *v = mean[cursor] * inv_kfact;
            let var = m2[cursor] / (m * (m - 1.0).max(1.0));
            max_se = max_se.max(var.sqrt() * inv_kfact);
            cursor += 1;
        }
    }
    Ok(ExpandOutput {
        chaos,
        max_se,
        degenerate,
    })
}
