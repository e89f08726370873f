//! Dense helpers shared across modules.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values[0]
}

/// Eigenvalues clipped below at `floor` keep square roots real on nearly
/// singular symmetric input.
const EIG_FLOOR: f64 = 1e-14;

/// Symmetric square root and inverse square root via eigendecomposition.
pub fn sym_sqrt_pair(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    let eig = m.clone().symmetric_eigen();
    let mut sqrt_vals = DVector::zeros(n);
    let mut inv_vals = DVector::zeros(n);
    for i in 0..n {
        let lambda = eig.eigenvalues[i];
        if lambda < -1e-9 {
            return Err(Error::DegenerateCovariance(format!(
                "negative eigenvalue {lambda}"
            )));
        }
        let clipped = lambda.max(EIG_FLOOR);
        sqrt_vals[i] = clipped.sqrt();
        inv_vals[i] = 1.0 / clipped.sqrt();
    }
    let q = &eig.eigenvectors;
    let sqrt = q * DMatrix::from_diagonal(&sqrt_vals) * q.transpose();
    let inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    Ok((sqrt, inv))
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(sym_sqrt_pair(m)?.0)
}

pub fn is_lower_triangular(m: &DMatrix<f64>, tol: f64) -> bool {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if m[(i, j)].abs() > tol {
                return false;
            }
        }
    }
    true
}

pub fn is_strictly_triangular(m: &DMatrix<f64>) -> bool {
    let lower = (0..m.nrows()).all(|i| (i..m.ncols()).all(|j| m[(i, j)] == 0.0));
    let upper = (0..m.nrows()).all(|i| (0..=i.min(m.ncols() - 1)).all(|j| m[(i, j)] == 0.0));
    lower || upper
}

/// max |a - b| entrywise.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (s, si) = sym_sqrt_pair(&m).unwrap();
        assert_abs_diff_eq!(&s * &s, m, epsilon = 1e-12);
        assert_abs_diff_eq!(&s * &si, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn operator_norm_matches_known() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert_abs_diff_eq!(operator_norm(&m), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn triangular_predicates() {
        let l = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert!(is_lower_triangular(&l, 0.0));
        assert!(is_strictly_triangular(&l));
        assert!(!is_strictly_triangular(&DMatrix::identity(2, 2)));
    }
}
