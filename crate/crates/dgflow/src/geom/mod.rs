//! Conformers, distance geometry, and structural metrics.

pub mod align;
pub mod bonds;
pub mod descriptor;
pub mod elements;

pub use align::{kabsch_align, rmsd, Alignment};
pub use bonds::{classify_bond_changes, covalent_radius, infer_bonds, BondChangeLabel, BondChanges};
pub use descriptor::coulomb_matrix;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One molecular geometry: atomic numbers plus Cartesian coordinates in
/// angstroms.
#[derive(Clone, Debug, PartialEq)]
pub struct Conformer {
    atomic_numbers: Vec<u8>,
    coords: Vec<[f64; 3]>,
}

impl Conformer {
    pub fn new(atomic_numbers: Vec<u8>, coords: Vec<[f64; 3]>) -> Result<Self> {
        if atomic_numbers.is_empty() {
            return Err(Error::InvalidArgument("conformer needs at least one atom".into()));
        }
        if atomic_numbers.len() != coords.len() {
            return Err(Error::AtomMismatch(format!(
                "{} atom types vs {} coordinates",
                atomic_numbers.len(),
                coords.len()
            )));
        }
        if let Some(&z) = atomic_numbers.iter().find(|&&z| !(1..=118).contains(&z)) {
            return Err(Error::UnknownElement(format!("atomic number {z}")));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conformer coordinates".into()));
        }
        Ok(Conformer {
            atomic_numbers,
            coords,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn atomic_numbers(&self) -> &[u8] {
        &self.atomic_numbers
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.coords
    }

    /// Coordinates as one flat [x0, y0, z0, x1, ...] vector.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.n_atoms() as f64;
        let mut c = [0.0; 3];
        for r in &self.coords {
            for k in 0..3 {
                c[k] += r[k] / n;
            }
        }
        c
    }

    /// Same atom count and atom-type sequence.
    pub fn same_species(&self, other: &Conformer) -> bool {
        self.atomic_numbers == other.atomic_numbers
    }

    pub fn with_coords(&self, coords: Vec<[f64; 3]>) -> Result<Conformer> {
        Conformer::new(self.atomic_numbers.clone(), coords)
    }
}

/// Symmetric pairwise-distance matrix with zero diagonal, in angstroms.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Validating constructor: symmetric (to 1e-9), zero diagonal, nonnegative.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix for {n} atoms needs {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "nonzero diagonal at {i}: {}",
                    values[i * n + i]
                )));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "invalid distance at ({i},{j}): {v}"
                    )));
                }
                if (v - values[j * n + i]).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric at ({i},{j}): {v} vs {}",
                        values[j * n + i]
                    )));
                }
            }
        }
        Ok(DistanceMatrix { n, values })
    }

    /// Repair constructor: symmetrize, zero the diagonal, clamp negatives.
    /// Used wherever arithmetic (noise, Euler steps) may drift off the
    /// manifold of valid distance matrices.
    pub fn from_raw(n: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix for {n} atoms needs {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distance matrix entries".into()));
        }
        for i in 0..n {
            values[i * n + i] = 0.0;
            for j in (i + 1)..n {
                let m = 0.5 * (values[i * n + j] + values[j * n + i]);
                let m = m.max(0.0);
                values[i * n + j] = m;
                values[j * n + i] = m;
            }
        }
        Ok(DistanceMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Strict upper triangle (i < j) in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.n], self.values.clone()).unwrap()
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &DistanceMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Pairwise distances via the Gram-matrix identity
/// `D^2 = diag(G) 1^T + 1 diag(G)^T - 2 G` with `G = R R^T`; negative
/// radicands from floating-point cancellation clamp to zero.
pub fn pairwise_distances(conformer: &Conformer) -> DistanceMatrix {
    let n = conformer.n_atoms();
    let coords = conformer.coords();
    let mut gram_diag = vec![0.0; n];
    for (i, r) in coords.iter().enumerate() {
        gram_diag[i] = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let gij = coords[i][0] * coords[j][0]
                + coords[i][1] * coords[j][1]
                + coords[i][2] * coords[j][2];
            let sq = (gram_diag[i] + gram_diag[j] - 2.0 * gij).max(0.0);
            let d = sq.sqrt();
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DistanceMatrix { n, values }
}

/// Mean absolute error over off-diagonal pairwise distances:
/// `(1/(N(N-1))) * sum_{i != j} |a_ij - b_ij|`.
pub fn dmae(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::ShapeMismatch(format!("dmae: {} vs {} atoms", a.n, b.n)));
    }
    if a.n < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..a.n {
        for j in 0..a.n {
            if i != j {
                sum += (a.get(i, j) - b.get(i, j)).abs();
            }
        }
    }
    Ok(sum / (a.n * (a.n - 1)) as f64)
}

/// Per-pair absolute percentage error of predicted distances, plus a
/// histogram over true-distance intervals.
#[derive(Clone, Debug)]
pub struct DistancePercentageErrors {
    /// (i, j, |pred - truth| / truth) for every i < j.
    pub per_pair: Vec<(usize, usize, f64)>,
    pub bins: Vec<DistanceBin>,
}

#[derive(Clone, Debug)]
pub struct DistanceBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_error: f64,
}

pub fn distance_percentage_errors(
    pred: &DistanceMatrix,
    truth: &DistanceMatrix,
    bin_width: f64,
) -> Result<DistancePercentageErrors> {
    if pred.n != truth.n {
        return Err(Error::ShapeMismatch(format!(
            "distance errors: {} vs {} atoms",
            pred.n, truth.n
        )));
    }
    if bin_width <= 0.0 {
        return Err(Error::InvalidArgument("bin width must be positive".into()));
    }
    let mut per_pair = Vec::new();
    let mut max_d = 0.0_f64;
    for i in 0..truth.n {
        for j in (i + 1)..truth.n {
            let t = truth.get(i, j);
            if t <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "zero true distance off-diagonal at ({i},{j})"
                )));
            }
            per_pair.push((i, j, (pred.get(i, j) - t).abs() / t));
            max_d = max_d.max(t);
        }
    }
    let n_bins = (max_d / bin_width).floor() as usize + 1;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(i, j, err) in &per_pair {
        let b = (truth.get(i, j) / bin_width).floor() as usize;
        sums[b] += err;
        counts[b] += 1;
    }
    let bins = (0..n_bins)
        .map(|b| DistanceBin {
            lower: b as f64 * bin_width,
            upper: (b + 1) as f64 * bin_width,
            count: counts[b],
            mean_error: if counts[b] > 0 {
                sums[b] / counts[b] as f64
            } else {
                0.0
            },
        })
        .collect();
    Ok(DistancePercentageErrors { per_pair, bins })
}

#[cfg(test)]
pub(crate) fn random_conformer(rng: &mut crate::numerics::Rng, n: usize, spread: f64) -> Conformer {
    let z = (0..n).map(|i| [1u8, 6, 7, 8][i % 4]).collect();
    let coords = (0..n)
        .map(|_| {
            [
                rng.normal() * spread,
                rng.normal() * spread,
                rng.normal() * spread,
            ]
        })
        .collect();
    Conformer::new(z, coords).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn two_atom_distances() {
        let c = Conformer::new(vec![1, 1], vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let d = pairwise_distances(&c);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 1), 0.0);
        assert!((d.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((d.get(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gram_identity_matches_per_pair_norms() {
        let mut rng = Rng::new(5);
        let c = random_conformer(&mut rng, 6, 2.0);
        let d = pairwise_distances(&c);
        for i in 0..6 {
            for j in 0..6 {
                let r = c.coords();
                let direct = ((r[i][0] - r[j][0]).powi(2)
                    + (r[i][1] - r[j][1]).powi(2)
                    + (r[i][2] - r[j][2]).powi(2))
                .sqrt();
                assert!((d.get(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distance_matrix_invariants_hold_for_random_conformers() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let n = 2 + rng.below(8);
            let c = random_conformer(&mut rng, n, 3.0);
            let d = pairwise_distances(&c);
            // Validating constructor accepts the output.
            DistanceMatrix::new(d.n(), d.values().to_vec()).unwrap();
        }
    }

    #[test]
    fn dmae_examples() {
        let a = DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let b = DistanceMatrix::new(2, vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        assert_eq!(dmae(&a, &a).unwrap(), 0.0);
        assert!((dmae(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(dmae(&a, &b).unwrap(), dmae(&b, &a).unwrap());
    }

    #[test]
    fn percentage_errors() {
        let truth = DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let pred = DistanceMatrix::new(2, vec![0.0, 1.1, 1.1, 0.0]).unwrap();
        let out = distance_percentage_errors(&pred, &truth, 0.5).unwrap();
        assert_eq!(out.per_pair.len(), 1);
        assert!((out.per_pair[0].2 - 0.1).abs() < 1e-12);
        let identical = distance_percentage_errors(&truth, &truth, 0.5).unwrap();
        assert!(identical.per_pair.iter().all(|&(_, _, e)| e == 0.0));
    }

    #[test]
    fn bin_means_match_direct_aggregation() {
        let mut rng = Rng::new(23);
        let c = random_conformer(&mut rng, 8, 2.0);
        let truth = pairwise_distances(&c);
        let c2 = random_conformer(&mut rng, 8, 2.0);
        let pred = pairwise_distances(&c2);
        let width = 0.75;
        let out = distance_percentage_errors(&pred, &truth, width).unwrap();
        for bin in &out.bins {
            let members: Vec<f64> = out
                .per_pair
                .iter()
                .filter(|&&(i, j, _)| {
                    let d = truth.get(i, j);
                    d >= bin.lower && d < bin.upper
                })
                .map(|&(_, _, e)| e)
                .collect();
            assert_eq!(members.len(), bin.count);
            if !members.is_empty() {
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                assert!((mean - bin.mean_error).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn raw_constructor_repairs() {
        let d = DistanceMatrix::from_raw(2, vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert!((d.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(d.get(0, 1), d.get(1, 0));
    }
}
