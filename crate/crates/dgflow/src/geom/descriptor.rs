//! Coulomb-matrix molecular descriptor.

use crate::error::{Error, Result};
use crate::geom::{pairwise_distances, Conformer};
use crate::numerics::Tensor;

/// Coulomb matrix: `C_ii = 0.5 * Z_i^2.4`, `C_ij = Z_i Z_j / d_ij`.
///
/// Errors on coincident atoms (zero off-diagonal distance).
pub fn coulomb_matrix(conformer: &Conformer) -> Result<Tensor> {
    let n = conformer.n_atoms();
    let d = pairwise_distances(conformer);
    let z = conformer.atomic_numbers();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        out.set(i, i, 0.5 * (z[i] as f64).powf(2.4));
        for j in (i + 1)..n {
            let dij = d.get(i, j);
            if dij == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "coincident atoms {i} and {j}"
                )));
            }
            let c = z[i] as f64 * z[j] as f64 / dij;
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    Ok(out)
}
