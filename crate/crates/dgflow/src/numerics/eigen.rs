//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the *columns* of the returned matrix, so that
/// `A = V diag(lambda) V^T`.
///
/// The input must be square and symmetric to within `1e-10` relative to its
/// largest entry.
pub fn sym_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::ShapeMismatch(format!(
            "sym_eigen needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let n = a.shape()[0];
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.at(i, j) - a.at(j, i)).abs() > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i},{j}): {} vs {}",
                    a.at(i, j),
                    a.at(j, i)
                )));
            }
        }
    }
    if n == 0 {
        return Ok((Vec::new(), Tensor::zeros(&[0, 0])));
    }

    // Work on a symmetrized copy so tiny input asymmetries cannot bias sweeps.
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.at(i, j) + a.at(j, i));
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let tol = 1e-15 * frob;
    let max_sweeps = 100;

    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q of M.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                // Accumulate the rotation into V.
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| eig[i].partial_cmp(&eig[j]).unwrap());

    let values: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    Ok((values, Tensor::new(vec![n, n], vectors)?))
}

/// Extract eigenvector `col` as a vector.
pub fn eigenvector(vectors: &Tensor, col: usize) -> Vec<f64> {
    let n = vectors.shape()[0];
    (0..n).map(|row| vectors.at(row, col)).collect()
}
