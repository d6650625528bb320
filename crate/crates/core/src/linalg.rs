//! Small dense helpers shared by the local operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative Frobenius defect `||A - A^T|| / ||A||`.
pub fn symmetry_defect(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| x.total_cmp(y));
    values
}

/// 2-norm condition number from singular values; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Explicit inverse of a 1x1, 2x2 or 3x3 matrix via the adjugate, with a
/// condition check. Larger matrices fall back to LU.
pub fn small_inverse(a: &DMatrix<f64>, cell: usize, max_cond: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::SizeMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let inv = match n {
        1 => {
            if a[(0, 0)] == 0.0 {
                return Err(Error::Singular {
                    cell,
                    cond: f64::INFINITY,
                });
            }
            DMatrix::from_element(1, 1, 1.0 / a[(0, 0)])
        }
        2 => {
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            if det == 0.0 {
                return Err(Error::Singular {
                    cell,
                    cond: f64::INFINITY,
                });
            }
            DMatrix::from_row_slice(
                2,
                2,
                &[a[(1, 1)] / det, -a[(0, 1)] / det, -a[(1, 0)] / det, a[(0, 0)] / det],
            )
        }
        3 => {
            let m = |i: usize, j: usize| a[(i, j)];
            let c00 = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
            let c01 = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
            let c02 = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
            let det = m(0, 0) * c00 + m(0, 1) * c01 + m(0, 2) * c02;
            if det == 0.0 {
                return Err(Error::Singular {
                    cell,
                    cond: f64::INFINITY,
                });
            }
            let c10 = m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2);
            let c11 = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
            let c12 = m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1);
            let c20 = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
            let c21 = m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2);
            let c22 = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
            // inverse = adj / det, adj = cofactor^T
            DMatrix::from_row_slice(3, 3, &[c00, c10, c20, c01, c11, c21, c02, c12, c22]) / det
        }
        _ => a.clone().try_inverse().ok_or(Error::Singular {
            cell,
            cond: f64::INFINITY,
        })?,
    };
    let cond = a.norm() * inv.norm() / n as f64;
    if !cond.is_finite() || cond > max_cond {
        return Err(Error::Singular { cell, cond });
    }
    Ok(inv)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(a)).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.inverse())
}

pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(a)).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

/// Orthogonal projector onto the complement of `range(n)`: `I - N (N^T N)^{-1} N^T`.
pub fn complement_projector(n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = n.transpose() * n;
    let inv = spd_inverse(&gram)?;
    let rows = n.nrows();
    Ok(DMatrix::identity(rows, rows) - n * inv * n.transpose())
}

/// Max-abs entry, used for relative tolerances.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
