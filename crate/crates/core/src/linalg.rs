//! Dense symmetric linear algebra used by the attributors.
//!
//! Hand-rolled rather than LAPACK-backed so the kernels stay generic over
//! [`Scalar`] and the factorization failure modes stay inspectable. Problem
//! sizes are bounded by the dense parameter cap, so cubic algorithms are fine.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails with [`Error::Numeric`] when a pivot is non-positive or non-finite,
/// which is how callers detect a Hessian or Gram matrix that is not positive
/// definite after damping.
pub fn cholesky<F: Scalar>(a: &Array2<F>) -> Result<Array2<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch {
            what: "cholesky input (square matrix)",
            expected: n,
            actual: a.ncols(),
        });
    }
    let mut l = Array2::<F>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag = diag - l[(j, k)] * l[(j, k)];
        }
        if !(diag > F::zero()) || !diag.is_finite() {
            return Err(Error::numeric(format!(
                "Cholesky factorization failed at pivot {j}: matrix is not positive definite \
                 (try a larger damping value)"
            )));
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor `L`.
pub fn cholesky_solve<F: Scalar>(l: &Array2<F>, b: &Array1<F>) -> Array1<F> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvectors are the columns of the returned matrix.
pub fn sym_eigen<F: Scalar>(a: &Array2<F>) -> Result<(Array1<F>, Array2<F>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch {
            what: "sym_eigen input (square matrix)",
            expected: n,
            actual: a.ncols(),
        });
    }
    let mut m = a.clone();
    let mut v = Array2::<F>::eye(n);
    let tol = F::from_f64(1e-14) * frobenius(&m).max(F::from_f64(1e-300));
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let off = off_diagonal_norm(&m);
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * F::from_f64(1e-2) {
                    continue;
                }
                // Jacobi rotation annihilating m[p,q]
                let theta = (m[(q, q)] - m[(p, p)]) / (F::from_f64(2.0) * apq);
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigvals = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut eigvecs = Array2::<F>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigvecs[(k, dst)] = v[(k, src)];
        }
    }
    Ok((eigvals, eigvecs))
}

fn frobenius<F: Scalar>(m: &Array2<F>) -> F {
    m.iter().map(|&x| x * x).sum::<F>().sqrt()
}

fn off_diagonal_norm<F: Scalar>(m: &Array2<F>) -> F {
    let n = m.nrows();
    let mut s = F::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s = s + m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}
