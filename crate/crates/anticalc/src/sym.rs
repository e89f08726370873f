//! Compressed symmetric coefficient tensors.
//!
//! A degree-k symmetric tensor over R^d is stored with one entry per
//! non-decreasing index tuple `i_1 <= ... <= i_k` (a k-multiset over d
//! symbols), giving `C(d + k - 1, k)` entries instead of `d^k`. Entry order
//! is colexicographic through the bijection `c_j = i_j + j` onto strict
//! combinations, so ranks are sums of binomials and the layout is stable; the
//! serialized form relies on this order.
//!
//! Frobenius norms, inner products and contractions over the full tensor are
//! recovered through the permutation count `k! / prod(mult_i!)` of each
//! multiset.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

/// Hard cap on compressed entries per degree; beyond this the dense helpers
/// would be unusable anyway.
pub const MAX_ENTRIES: usize = 1 << 24;

/// Shared layout data for (dim, degree): tuples, permutation counts, ranking.
#[derive(Debug)]
pub struct SymSpace {
    dim: usize,
    degree: usize,
    tuples: Vec<Vec<u16>>,
    perm_counts: Vec<f64>,
    // binom[n][k] = C(n, k), n <= dim + degree, k <= degree + 1
    binom: Vec<Vec<u64>>,
}

fn binomial_table(max_n: usize, max_k: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; max_k + 1]; max_n + 1];
    for n in 0..=max_n {
        t[n][0] = 1;
        for k in 1..=max_k.min(n) {
            t[n][k] = t[n - 1][k - 1] + if k <= n - 1 { t[n - 1][k] } else { 0 };
        }
    }
    t
}

pub(crate) fn count_multisets(dim: usize, degree: usize) -> usize {
    // C(dim + degree - 1, degree) computed in u128 to survive the cap check.
    if degree == 0 {
        return 1;
    }
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..degree {
        num = num.saturating_mul((dim + degree - 1 - i) as u128);
        den *= (i + 1) as u128;
    }
    let v = num / den;
    if v > usize::MAX as u128 {
        usize::MAX
    } else {
        v as usize
    }
}

fn enumerate_tuples(dim: usize, degree: usize) -> Vec<Vec<u16>> {
    if degree == 0 {
        return vec![vec![]];
    }
    // Colex order: last (largest) element varies slowest.
    let mut out = Vec::with_capacity(count_multisets(dim, degree));
    let mut current = vec![0u16; degree];
    fn rec(dim: usize, pos: usize, max_val: usize, current: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
        if pos == 0 {
            out.push(current.clone());
            return;
        }
        for v in 0..=max_val {
            current[pos - 1] = v as u16;
            rec(dim, pos - 1, v, current, out);
        }
    }
    // Recurse from the last slot down; each prefix is bounded by its successor.
    for last in 0..dim {
        current[degree - 1] = last as u16;
        rec(dim, degree - 1, last, &mut current, &mut out);
    }
    out
}

fn perm_count(tuple: &[u16]) -> f64 {
    let k = tuple.len();
    let mut count = factorial(k);
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j < k && tuple[j] == tuple[i] {
            j += 1;
        }
        count /= factorial(j - i);
        i = j;
    }
    count
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

pub fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

pub fn binomial_f64(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut v = 1.0;
    for i in 0..k {
        v *= (n - i) as f64 / (i + 1) as f64;
    }
    v.round()
}

static REGISTRY: OnceLock<RwLock<HashMap<(usize, usize), Arc<SymSpace>>>> = OnceLock::new();

impl SymSpace {
    /// Registry lookup; builds the layout on first use.
    ///
    /// Panics if the compressed entry count exceeds [`MAX_ENTRIES`]; public
    /// constructors guard dimensions before reaching this point.
    pub fn get(dim: usize, degree: usize) -> Arc<SymSpace> {
        assert!(dim > 0, "tensor dimension must be positive");
        let entries = count_multisets(dim, degree);
        assert!(
            entries <= MAX_ENTRIES,
            "symmetric layout with {entries} entries exceeds the cap"
        );
        let reg = REGISTRY.get_or_init(|| RwLock::new(HashMap::new()));
        if let Some(s) = reg.read().unwrap().get(&(dim, degree)) {
            return s.clone();
        }
        let tuples = enumerate_tuples(dim, degree);
        let perm_counts = tuples.iter().map(|t| perm_count(t)).collect();
        let space = Arc::new(SymSpace {
            dim,
            degree,
            tuples,
            perm_counts,
            binom: binomial_table(dim + degree + 1, degree + 1),
        });
        let mut w = reg.write().unwrap();
        w.entry((dim, degree)).or_insert_with(|| space.clone());
        w.get(&(dim, degree)).unwrap().clone()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuple(&self, idx: usize) -> &[u16] {
        &self.tuples[idx]
    }

    pub fn tuples(&self) -> &[Vec<u16>] {
        &self.tuples
    }

    pub fn perm_count(&self, idx: usize) -> f64 {
        self.perm_counts[idx]
    }

    /// Rank of a sorted tuple: colex combinadic of `(i_j + j)`.
    pub fn rank(&self, sorted: &[u16]) -> usize {
        debug_assert_eq!(sorted.len(), self.degree);
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        let mut r = 0u64;
        for (j, &i) in sorted.iter().enumerate() {
            r += self.binom[i as usize + j][j + 1];
        }
        r as usize
    }
}

/// Multiplicity view `(index, count)` of a sorted tuple.
pub(crate) fn multiplicities(tuple: &[u16]) -> Vec<(u16, u8)> {
    let mut out: Vec<(u16, u8)> = Vec::with_capacity(tuple.len());
    for &i in tuple {
        match out.last_mut() {
            Some((idx, c)) if *idx == i => *c += 1,
            _ => out.push((i, 1)),
        }
    }
    out
}

fn small_binom(n: u8, k: u8) -> f64 {
    binomial_f64(n as usize, k as usize)
}

/// Visit every sub-multiset of size `take`, reporting the chosen counts and
/// the number of position-subsets realizing it (`prod C(mult_i, chosen_i)`).
pub(crate) fn for_each_submultiset<F>(mults: &[(u16, u8)], take: usize, f: &mut F)
where
    F: FnMut(&[(u16, u8)], f64),
{
    fn rec<F>(
        mults: &[(u16, u8)],
        pos: usize,
        remaining: usize,
        chosen: &mut Vec<(u16, u8)>,
        weight: f64,
        f: &mut F,
    ) where
        F: FnMut(&[(u16, u8)], f64),
    {
        if remaining == 0 {
            f(chosen, weight);
            return;
        }
        if pos == mults.len() {
            return;
        }
        let tail: usize = mults[pos..].iter().map(|&(_, c)| c as usize).sum();
        if tail < remaining {
            return;
        }
        let (idx, cap) = mults[pos];
        let take_here_max = remaining.min(cap as usize);
        for c in 0..=take_here_max {
            if c > 0 {
                chosen.push((idx, c as u8));
            }
            rec(
                mults,
                pos + 1,
                remaining - c,
                chosen,
                weight * small_binom(cap, c as u8),
                f,
            );
            if c > 0 {
                chosen.pop();
            }
        }
    }
    let mut chosen = Vec::with_capacity(mults.len());
    rec(mults, 0, take, &mut chosen, 1.0, f);
}

pub(crate) fn tuple_from_mults(mults: &[(u16, u8)]) -> Vec<u16> {
    let mut t = Vec::with_capacity(mults.iter().map(|&(_, c)| c as usize).sum());
    for &(i, c) in mults {
        for _ in 0..c {
            t.push(i);
        }
    }
    t
}

/// Multiset difference `m \ sub` (sub must be contained in m).
pub(crate) fn mults_minus(m: &[(u16, u8)], sub: &[(u16, u8)]) -> Vec<u16> {
    let mut t = Vec::new();
    let mut si = 0;
    for &(i, c) in m {
        let mut c = c;
        if si < sub.len() && sub[si].0 == i {
            c -= sub[si].1;
            si += 1;
        }
        for _ in 0..c {
            t.push(i);
        }
    }
    t
}

pub(crate) fn merge_sorted(a: &[u16], b: &[u16]) -> Vec<u16> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

pub(crate) fn insert_sorted(t: &[u16], v: u16) -> Vec<u16> {
    let pos = t.partition_point(|&x| x <= v);
    let mut out = Vec::with_capacity(t.len() + 1);
    out.extend_from_slice(&t[..pos]);
    out.push(v);
    out.extend_from_slice(&t[pos..]);
    out
}

/// Probabilists' Hermite values He_0..He_kmax at every coordinate of a point.
pub struct HermiteTable {
    kmax: usize,
    values: Vec<f64>,
}

impl HermiteTable {
    pub fn new(point: &DVector<f64>, kmax: usize) -> Self {
        let dim = point.len();
        let mut values = vec![0.0; dim * (kmax + 1)];
        for i in 0..dim {
            let z = point[i];
            let row = &mut values[i * (kmax + 1)..(i + 1) * (kmax + 1)];
            row[0] = 1.0;
            if kmax >= 1 {
                row[1] = z;
            }
            for k in 1..kmax {
                row[k + 1] = z * row[k] - k as f64 * row[k - 1];
            }
        }
        Self { kmax, values }
    }

    #[inline]
    pub fn value(&self, coord: usize, degree: usize) -> f64 {
        self.values[coord * (self.kmax + 1) + degree]
    }
}

/// Symmetric tensor: a compressed coefficient vector over a [`SymSpace`].
#[derive(Clone, Debug)]
pub struct SymTensor {
    space: Arc<SymSpace>,
    data: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(dim: usize, degree: usize) -> Self {
        let space = SymSpace::get(dim, degree);
        let data = vec![0.0; space.len()];
        Self { space, data }
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        let mut t = Self::zeros(dim, 0);
        t.data[0] = value;
        t
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let mut t = Self::zeros(v.len(), 1);
        t.data.copy_from_slice(v.as_slice());
        t
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn degree(&self) -> usize {
        self.space.degree
    }

    pub fn space(&self) -> &Arc<SymSpace> {
        &self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, sorted: &[u16]) -> f64 {
        self.data[self.space.rank(sorted)]
    }

    pub fn set(&mut self, sorted: &[u16], v: f64) {
        let r = self.space.rank(sorted);
        self.data[r] = v;
    }

    /// Frobenius norm squared of the full (uncompressed) tensor.
    pub fn norm_sq(&self) -> f64 {
        self.data
            .iter()
            .zip(self.space.perm_counts.iter())
            .map(|(a, c)| c * a * a)
            .sum()
    }

    /// Frobenius inner product over the full tensor.
    pub fn dot(&self, other: &SymTensor) -> f64 {
        assert!(Arc::ptr_eq(&self.space, &other.space) || self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .zip(self.space.perm_counts.iter())
            .map(|((a, b), c)| c * a * b)
            .sum()
    }

    fn same_shape(&self, other: &SymTensor) -> bool {
        self.space.dim == other.space.dim && self.space.degree == other.space.degree
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn axpy(&mut self, alpha: f64, x: &SymTensor) {
        assert!(self.same_shape(x));
        for (a, b) in self.data.iter_mut().zip(x.data.iter()) {
            *a += alpha * b;
        }
    }

    /// Value of the associated Hermite form at the point behind `he`.
    pub fn evaluate(&self, he: &HermiteTable) -> f64 {
        let mut total = 0.0;
        for (idx, tuple) in self.space.tuples.iter().enumerate() {
            let a = self.data[idx];
            if a == 0.0 {
                continue;
            }
            let mut prod = 1.0;
            let mut i = 0;
            while i < tuple.len() {
                let mut j = i;
                while j < tuple.len() && tuple[j] == tuple[i] {
                    j += 1;
                }
                prod *= he.value(tuple[i] as usize, j - i);
                i = j;
            }
            total += self.space.perm_counts[idx] * a * prod;
        }
        total
    }

    /// Symmetrized tensor product (the Wick coefficient of two chaos layers).
    pub fn sym_outer(&self, other: &SymTensor) -> SymTensor {
        assert_eq!(self.dim(), other.dim());
        let (j, k) = (self.degree(), other.degree());
        let mut out = SymTensor::zeros(self.dim(), j + k);
        let inv_choose = 1.0 / binomial_f64(j + k, j);
        let out_space = out.space.clone();
        for (idx, tuple) in out_space.tuples.iter().enumerate() {
            let m = multiplicities(tuple);
            let mut acc = 0.0;
            for_each_submultiset(&m, j, &mut |chosen, weight| {
                let p = tuple_from_mults(chosen);
                let q = mults_minus(&m, chosen);
                acc += weight * self.get(&p) * other.get(&q);
            });
            out.data[idx] = inv_choose * acc;
        }
        out
    }

    /// Symmetrized contraction of `r` slot pairs (used by the pointwise
    /// product expansion).
    pub fn contract_r(&self, other: &SymTensor, r: usize) -> SymTensor {
        assert_eq!(self.dim(), other.dim());
        let (j, k) = (self.degree(), other.degree());
        assert!(r <= j && r <= k);
        let g = j + k - 2 * r;
        let dim = self.dim();
        let w_space = SymSpace::get(dim, r);
        let mut out = SymTensor::zeros(dim, g);
        let inv_choose = 1.0 / binomial_f64(g, j - r);
        let out_space = out.space.clone();
        for (idx, tuple) in out_space.tuples.iter().enumerate() {
            let m = multiplicities(tuple);
            let mut acc = 0.0;
            for_each_submultiset(&m, j - r, &mut |chosen, weight| {
                let p = tuple_from_mults(chosen);
                let q = mults_minus(&m, chosen);
                let mut inner = 0.0;
                for (widx, w) in w_space.tuples.iter().enumerate() {
                    let a = self.get(&merge_sorted(&p, w));
                    if a == 0.0 {
                        continue;
                    }
                    let b = other.get(&merge_sorted(&q, w));
                    inner += w_space.perm_counts[widx] * a * b;
                }
                acc += weight * inner;
            });
            out.data[idx] = inv_choose * acc;
        }
        out
    }

    /// Contract every slot with `c` (the degree-k building block of second
    /// quantization): `out(v_1..v_k) = self(C v_1, .., C v_k)`.
    pub fn apply_contraction(&self, c: &DMatrix<f64>) -> Result<SymTensor> {
        let d = self.dim();
        if c.nrows() != d || c.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.nrows(),
            });
        }
        let k = self.degree();
        match k {
            0 => return Ok(self.clone()),
            1 => {
                let v = DVector::from_column_slice(&self.data);
                let w = c.transpose() * v;
                return Ok(SymTensor::from_vector(&w));
            }
            _ => {}
        }
        let dense_len = d.checked_pow(k as u32).ok_or(Error::TensorTooLarge(usize::MAX))?;
        if dense_len > MAX_ENTRIES * 8 {
            return Err(Error::TensorTooLarge(dense_len));
        }
        // Expand to a dense representative, contract one slot per pass while
        // rotating it to the low-order position, then recompress.
        let mut dense = vec![0.0f64; dense_len];
        let mut digits = vec![0u16; k];
        for (flat, slot) in dense.iter_mut().enumerate() {
            let mut rest = flat;
            for d_i in digits.iter_mut().rev() {
                *d_i = (rest % d) as u16;
                rest /= d;
            }
            let mut sorted = digits.clone();
            sorted.sort_unstable();
            *slot = self.get(&sorted);
        }
        let stride = dense_len / d;
        let mut next = vec![0.0f64; dense_len];
        for _pass in 0..k {
            next.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                let block = &dense[i * stride..(i + 1) * stride];
                for j in 0..d {
                    let w = c[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    for (cc, &val) in block.iter().enumerate() {
                        next[cc * d + j] += w * val;
                    }
                }
            }
            std::mem::swap(&mut dense, &mut next);
        }
        let mut out = SymTensor::zeros(d, k);
        let out_space = out.space.clone();
        for (idx, tuple) in out_space.tuples.iter().enumerate() {
            let mut flat = 0usize;
            for &t in tuple {
                flat = flat * d + t as usize;
            }
            out.data[idx] = dense[flat];
        }
        Ok(out)
    }

    /// Fix the first slot at basis vector `h`: `out(v_2..v_k) = self(e_h, v..)`
    /// (the derivative uses `k * this`).
    pub fn slot_fixed(&self, h: usize) -> SymTensor {
        let k = self.degree();
        assert!(k >= 1);
        let mut out = SymTensor::zeros(self.dim(), k - 1);
        let out_space = out.space.clone();
        for (idx, tuple) in out_space.tuples.iter().enumerate() {
            out.data[idx] = self.get(&insert_sorted(tuple, h as u16));
        }
        out
    }
}
