//! Cartesian coordinates from a distance matrix.
//!
//! Classical multidimensional scaling seeds the geometry; L-BFGS then
//! minimizes the weighted stress
//! `sum_{i<j} w_ij (d_hat_ij - ||r_i - r_j||)^2` with `w_ij = 1/d_hat_ij^2`,
//! which emphasizes the short distances that carry bonding structure.

use crate::error::{Error, Result};
use crate::geom::DistanceMatrix;
use crate::numerics::{lbfgs_minimize, sym_eigen, LbfgsConfig, LbfgsStatus, Tensor};

/// Weights are capped so degenerate predicted distances (below 1e-6) cannot
/// blow up the objective.
const WEIGHT_CAP: f64 = 1e12;

/// Weighted-stress problem: target distances plus their weights.
#[derive(Clone, Debug)]
pub struct StressProblem {
    target: DistanceMatrix,
    /// w_ij for the strict upper triangle, row-major.
    weights: Vec<f64>,
}

impl StressProblem {
    pub fn new(target: DistanceMatrix) -> Self {
        let weights = target
            .upper_triangle()
            .iter()
            .map(|&d| (1.0 / (d * d)).min(WEIGHT_CAP))
            .collect();
        StressProblem { target, weights }
    }

    pub fn n(&self) -> usize {
        self.target.n()
    }

    /// Stress value at flat coordinates [x0, y0, z0, x1, ...].
    pub fn stress(&self, coords: &[f64]) -> f64 {
        self.eval(coords).0
    }

    /// Stress and its gradient.
    pub fn eval(&self, coords: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n();
        let mut value = 0.0;
        let mut grad = vec![0.0; 3 * n];
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[3 * i] - coords[3 * j];
                let dy = coords[3 * i + 1] - coords[3 * j + 1];
                let dz = coords[3 * i + 2] - coords[3 * j + 2];
                let r = (dx * dx + dy * dy + dz * dz).sqrt().max(1e-12);
                let target = self.target.get(i, j);
                let w = self.weights[idx];
                let diff = target - r;
                value += w * diff * diff;
                let factor = -2.0 * w * diff / r;
                grad[3 * i] += factor * dx;
                grad[3 * i + 1] += factor * dy;
                grad[3 * i + 2] += factor * dz;
                grad[3 * j] -= factor * dx;
                grad[3 * j + 1] -= factor * dy;
                grad[3 * j + 2] -= factor * dz;
                idx += 1;
            }
        }
        (value, grad)
    }
}

/// Classical MDS embedding of a distance matrix.
///
/// Double-centers `-1/2 J D^2 J`, takes the top `dim` eigenpairs (negative
/// eigenvalues clamp to zero), and returns coordinates `[n, dim]` with a
/// deterministic sign convention per axis (largest-magnitude coordinate
/// positive).
pub fn embed_mds(d: &DistanceMatrix, dim: usize) -> Result<Tensor> {
    let n = d.n();
    if n == 0 {
        return Err(Error::InvalidArgument("empty distance matrix".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension 0".into()));
    }
    if n == 1 {
        return Ok(Tensor::zeros(&[1, dim]));
    }

    // B = -1/2 J D^2 J with J = I - 11^T/n.
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = d.get(i, j);
            d2[i * n + j] = v * v;
        }
    }
    let mut row_mean = vec![0.0; n];
    let mut col_mean = vec![0.0; n];
    let mut grand = 0.0;
    for i in 0..n {
        for j in 0..n {
            row_mean[i] += d2[i * n + j];
            col_mean[j] += d2[i * n + j];
            grand += d2[i * n + j];
        }
    }
    for v in row_mean.iter_mut().chain(col_mean.iter_mut()) {
        *v /= n as f64;
    }
    grand /= (n * n) as f64;
    let mut b = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            b.set(
                i,
                j,
                -0.5 * (d2[i * n + j] - row_mean[i] - col_mean[j] + grand),
            );
        }
    }
    // Symmetrize against rounding before the eigensolver's strict check.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (b.at(i, j) + b.at(j, i));
            b.set(i, j, m);
            b.set(j, i, m);
        }
    }

    let (values, vectors) = sym_eigen(&b)?;
    let mut coords = Tensor::zeros(&[n, dim]);
    for k in 0..dim.min(n) {
        // Eigenvalues ascend; take from the top.
        let col = n - 1 - k;
        let lambda = values[col].max(0.0);
        let scale = lambda.sqrt();
        // Sign convention: the largest-magnitude coordinate is positive.
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for row in 0..n {
            let v = vectors.at(row, col);
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = if v >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for row in 0..n {
            coords.set(row, k, vectors.at(row, col) * scale * sign);
        }
    }
    Ok(coords)
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Centroid-at-origin coordinates.
    pub coords: Vec<[f64; 3]>,
    pub initial_stress: f64,
    pub final_stress: f64,
    pub optimizer_status: LbfgsStatus,
    pub iterations: usize,
}

impl Reconstruction {
    /// The mirror image of the recovered geometry. A distance matrix
    /// determines a structure only up to rigid motion plus reflection, so
    /// the two enantiomers are equally valid embeddings.
    pub fn mirror_coords(&self) -> Vec<[f64; 3]> {
        self.coords.iter().map(|r| [-r[0], r[1], r[2]]).collect()
    }

    /// Resolve the enantiomer ambiguity against a reference structure:
    /// returns whichever of the two mirror images has the lower RMSD to it.
    /// The embedding itself still comes purely from the distance matrix.
    pub fn oriented_toward(&self, reference: &crate::geom::Conformer) -> Result<Vec<[f64; 3]>> {
        let direct = reference.with_coords(self.coords.clone())?;
        let mirrored = reference.with_coords(self.mirror_coords())?;
        let rmsd_direct = crate::geom::rmsd(reference, &direct)?;
        let rmsd_mirror = crate::geom::rmsd(reference, &mirrored)?;
        Ok(if rmsd_direct <= rmsd_mirror {
            self.coords.clone()
        } else {
            self.mirror_coords()
        })
    }
}

/// Minimize the weighted stress from caller-supplied initial coordinates.
/// The returned stress never exceeds the initial stress.
pub fn refine_coordinates(target: &DistanceMatrix, init: &[f64]) -> Result<Reconstruction> {
    let n = target.n();
    if init.len() != 3 * n {
        return Err(Error::ShapeMismatch(format!(
            "refine: {} coordinates for {} atoms",
            init.len(),
            n
        )));
    }
    let problem = StressProblem::new(target.clone());
    let initial_stress = problem.stress(init);
    let config = LbfgsConfig {
        tol_grad: 1e-8,
        max_iterations: 500,
        ..LbfgsConfig::default()
    };
    let result = lbfgs_minimize(|x| problem.eval(x), init, &config)?;
    // L-BFGS accepts only decreasing steps, so this holds by construction;
    // keep the cheaper of the two just in case the line search failed at
    // iteration zero.
    let (coords_flat, final_stress) = if result.value <= initial_stress {
        (result.x, result.value)
    } else {
        (init.to_vec(), initial_stress)
    };
    let mut coords: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            [
                coords_flat[3 * i],
                coords_flat[3 * i + 1],
                coords_flat[3 * i + 2],
            ]
        })
        .collect();
    // Translation-normalize for determinism.
    let mut centroid = [0.0; 3];
    for r in &coords {
        for k in 0..3 {
            centroid[k] += r[k] / n as f64;
        }
    }
    for r in &mut coords {
        for k in 0..3 {
            r[k] -= centroid[k];
        }
    }
    Ok(Reconstruction {
        coords,
        initial_stress,
        final_stress,
        optimizer_status: result.status,
        iterations: result.iterations,
    })
}

/// Full reconstruction: MDS embedding followed by stress refinement.
pub fn reconstruct(target: &DistanceMatrix) -> Result<Reconstruction> {
    let init = embed_mds(target, 3)?;
    refine_coordinates(target, init.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{pairwise_distances, random_conformer, rmsd, Conformer};
    use crate::numerics::Rng;

    #[test]
    fn equilateral_triangle_exact() {
        let side = 1.0;
        let d = DistanceMatrix::new(
            3,
            vec![0.0, side, side, side, 0.0, side, side, side, 0.0],
        )
        .unwrap();
        let coords = embed_mds(&d, 3).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (coords.at(i, k) - coords.at(j, k)).powi(2);
                }
                assert!((s.sqrt() - side).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn collinear_points_embed_on_a_line() {
        let d = DistanceMatrix::new(
            3,
            vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0],
        )
        .unwrap();
        let coords = embed_mds(&d, 3).unwrap();
        let dist = |i: usize, j: usize| {
            let mut s = 0.0;
            for k in 0..3 {
                s += (coords.at(i, k) - coords.at(j, k)).powi(2);
            }
            s.sqrt()
        };
        assert!((dist(0, 1) - 1.0).abs() < 1e-10);
        assert!((dist(1, 2) - 1.0).abs() < 1e-10);
        assert!((dist(0, 2) - 2.0).abs() < 1e-10);
        // Two axes are (numerically) unused.
        for k in 1..3 {
            for i in 0..3 {
                assert!(coords.at(i, k).abs() < 1e-7, "axis {k} row {i}");
            }
        }
    }

    #[test]
    fn mds_roundtrip_on_random_conformer() {
        let mut rng = Rng::new(31);
        let c = random_conformer(&mut rng, 8, 2.0);
        let d = pairwise_distances(&c);
        let coords = embed_mds(&d, 3).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (coords.at(i, k) - coords.at(j, k)).powi(2);
                }
                assert!((s.sqrt() - d.get(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn exact_matrix_refines_to_zero_stress() {
        let mut rng = Rng::new(37);
        let c = random_conformer(&mut rng, 6, 1.5);
        let d = pairwise_distances(&c);
        let rec = reconstruct(&d).unwrap();
        assert!(rec.final_stress < 1e-10, "stress {}", rec.final_stress);
    }

    #[test]
    fn noisy_matrix_improves_on_mds_init() {
        let mut rng = Rng::new(41);
        let c = random_conformer(&mut rng, 7, 1.5);
        let exact = pairwise_distances(&c);
        let n = exact.n();
        let mut noisy = exact.values().to_vec();
        for i in 0..n {
            for j in (i + 1)..n {
                let noise = rng.uniform_in(-0.05, 0.05);
                noisy[i * n + j] = (noisy[i * n + j] + noise).max(0.1);
                noisy[j * n + i] = noisy[i * n + j];
            }
        }
        let target = DistanceMatrix::new(n, noisy).unwrap();
        let rec = reconstruct(&target).unwrap();
        assert!(
            rec.final_stress < rec.initial_stress,
            "{} !< {}",
            rec.final_stress,
            rec.initial_stress
        );
    }

    #[test]
    fn scaling_distances_scales_recovered_geometry() {
        let mut rng = Rng::new(43);
        let c = random_conformer(&mut rng, 5, 1.2);
        let d = pairwise_distances(&c);
        let s = 1.8;
        let scaled =
            DistanceMatrix::new(d.n(), d.values().iter().map(|v| v * s).collect()).unwrap();
        let rec_base = reconstruct(&d).unwrap();
        let rec_scaled = reconstruct(&scaled).unwrap();
        let conf_base = Conformer::new(vec![1; 5], rec_base.coords.clone()).unwrap();
        let conf_scaled = Conformer::new(vec![1; 5], rec_scaled.coords.clone()).unwrap();
        let db = pairwise_distances(&conf_base);
        let ds = pairwise_distances(&conf_scaled);
        for i in 0..5 {
            for j in 0..5 {
                assert!((ds.get(i, j) - s * db.get(i, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_atom_reconstruction() {
        let d = DistanceMatrix::new(1, vec![0.0]).unwrap();
        let rec = reconstruct(&d).unwrap();
        assert_eq!(rec.coords, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn two_atom_reconstruction() {
        let d = DistanceMatrix::new(2, vec![0.0, 1.5, 1.5, 0.0]).unwrap();
        let rec = reconstruct(&d).unwrap();
        let r = rec.coords;
        let dist = ((r[0][0] - r[1][0]).powi(2)
            + (r[0][1] - r[1][1]).powi(2)
            + (r[0][2] - r[1][2]).powi(2))
        .sqrt();
        assert!((dist - 1.5).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_rmsd_under_tolerance() {
        // The distance matrix fixes the geometry only up to rigid motion plus
        // reflection; the round trip resolves the enantiomer against the
        // original before comparing.
        let mut rng = Rng::new(47);
        for _ in 0..10 {
            let n = 3 + rng.below(10);
            let c = random_conformer(&mut rng, n, 1.8);
            let rec = reconstruct(&pairwise_distances(&c)).unwrap();
            let rebuilt = c.with_coords(rec.oriented_toward(&c).unwrap()).unwrap();
            assert!(rmsd(&c, &rebuilt).unwrap() < 1e-6);
        }
    }
}
