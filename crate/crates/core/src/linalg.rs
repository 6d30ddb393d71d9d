//! Small dense kernels shared by the covariance and reduction stages.
//!
//! Everything here operates on symmetric matrices of modest size (the
//! reduced dimension), so plain O(k^3) routines are used throughout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// (A + A^T) / 2, in place on a copy.
pub fn symmetrize(a: &ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    out
}

/// Max absolute asymmetry |A - A^T| relative to the largest entry.
pub fn asymmetry(a: &ArrayView2<f64>) -> f64 {
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
            scale = scale.max(a[[i, j]].abs());
        }
    }
    if scale > 0.0 {
        worst / scale
    } else {
        0.0
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix.
///
/// Returns `None` when a pivot is non-positive or non-finite, which is the
/// signal the jittered factorisation loop retries on.
pub fn cholesky_lower(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]];
            }
            if i == j {
                if !s.is_finite() || s <= 0.0 {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solve L x = b by forward substitution, writing into `out`.
pub fn solve_lower_into(l: &ArrayView2<f64>, b: &ArrayView1<f64>, out: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[[i, j]] * out[j];
        }
        out[i] = s / l[[i, i]];
    }
}

/// Solve L x = b by forward substitution.
pub fn solve_lower(l: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let mut out = vec![0.0; b.len()];
    solve_lower_into(l, b, &mut out);
    Array1::from_vec(out)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted in
/// non-increasing order and eigenvectors as matching columns. The input is
/// symmetrized first; rotations keep the eigenvector basis orthonormal to
/// machine precision.
pub fn jacobi_eigh(a: &ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    let mut s = symmetrize(a);
    let mut v = Array2::<f64>::eye(n);
    if n <= 1 {
        let vals = Array1::from_vec(if n == 1 { vec![s[[0, 0]]] } else { vec![] });
        return Ok((vals, v));
    }

    let frob = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1e-300);
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += s[[p, q]] * s[[p, q]];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                s[[j, j]]
                    .partial_cmp(&s[[i, i]])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(i.cmp(&j))
            });
            let vals = Array1::from_iter(order.iter().map(|&i| s[[i, i]]));
            let mut vecs = Array2::<f64>::zeros((n, n));
            for (dst, &src) in order.iter().enumerate() {
                for r in 0..n {
                    vecs[[r, dst]] = v[[r, src]];
                }
            }
            return Ok((vals, vecs));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = s[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = s[[p, p]];
                let aqq = s[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[[k, p]];
                    let skq = s[[k, q]];
                    s[[k, p]] = c * skp - sn * skq;
                    s[[k, q]] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[[p, k]];
                    let sqk = s[[q, k]];
                    s[[p, k]] = c * spk - sn * sqk;
                    s[[q, k]] = sn * spk + c * sqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::NumericalFailure("jacobi sweep limit exceeded"))
}
