//! Dense solves for small symmetric positive definite systems.
//!
//! Problems here are tiny (feature-count by feature-count), so a plain
//! Cholesky factorization is all that is needed.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `A x` for a dense square matrix stored as rows.
pub fn matvec<F: Scalar>(a: &[Vec<F>], x: &[F]) -> Result<Vec<F>> {
    let n = a.len();
    let mut out = vec![F::zero(); n];
    for (slot, row) in out.iter_mut().zip(a) {
        if row.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: row.len() });
        }
        *slot = row.iter().zip(x).map(|(m, v)| *m * *v).sum();
    }
    Ok(out)
}

/// Solves `A x = b` for symmetric positive definite `A` via Cholesky.
///
/// Only the lower triangle of `a` is read. Fails with `InvalidArgument`
/// when a pivot is not strictly positive, which is how indefiniteness
/// shows up during factorization.
pub fn solve_spd<F: Scalar>(a: &[Vec<F>], b: &[F]) -> Result<Vec<F>> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    for row in a {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry"));
        }
    }

    // lower-triangular factor, row-major
    let mut l = vec![vec![F::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum = sum - l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= F::zero() {
                    return Err(Error::invalid(format!(
                        "matrix is not positive definite (pivot {} at row {})",
                        crate::scalar::to_f64(sum),
                        i
                    )));
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }

    // L y = b
    let mut y = vec![F::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    // L^T x = y
    let mut x = vec![F::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum = sum - l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Ok(x)
}
