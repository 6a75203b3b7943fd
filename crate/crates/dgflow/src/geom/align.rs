//! Kabsch superposition and RMSD.

use crate::error::{Error, Result};
use crate::geom::Conformer;
use crate::numerics::{sym_eigen, Tensor};

/// Result of optimally superposing a mobile structure onto a reference.
#[derive(Clone, Debug)]
pub struct Alignment {
    /// Proper rotation (det = +1), row-major.
    pub rotation: [[f64; 3]; 3],
    /// Aligned mobile coordinates.
    pub aligned: Vec<[f64; 3]>,
    /// RMSD after superposition.
    pub rmsd: f64,
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// SVD of a 3x3 matrix via the symmetric eigendecomposition of `M^T M`,
/// with orthonormal completion of left singular vectors for rank-deficient
/// inputs. Singular values come out descending.
struct Svd3 {
    u: [[f64; 3]; 3], // columns are left singular vectors
    v: [[f64; 3]; 3], // columns are right singular vectors
}

fn svd3(m: &[[f64; 3]; 3]) -> Svd3 {
    let mut mtm = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += m[k][i] * m[k][j];
            }
            mtm.set(i, j, s);
        }
    }
    let (values, vectors) = sym_eigen(&mtm).expect("M^T M is symmetric");
    // Reorder descending.
    let order = [2usize, 1, 0];
    let mut v = [[0.0; 3]; 3];
    let mut sigma = [0.0; 3];
    for (col, &src) in order.iter().enumerate() {
        sigma[col] = values[src].max(0.0).sqrt();
        for row in 0..3 {
            v[row][col] = vectors.at(row, src);
        }
    }

    // u_k = M v_k / sigma_k where sigma_k is significant, else completed
    // to an orthonormal basis.
    let scale = sigma[0].max(1e-300);
    let mut u_cols: Vec<[f64; 3]> = Vec::new();
    for k in 0..3 {
        if sigma[k] > 1e-12 * scale {
            let vk = [v[0][k], v[1][k], v[2][k]];
            let mut uk = [0.0; 3];
            for r in 0..3 {
                uk[r] = (m[r][0] * vk[0] + m[r][1] * vk[1] + m[r][2] * vk[2]) / sigma[k];
            }
            u_cols.push(uk);
        }
    }
    // Gram-Schmidt completion against the coordinate axes.
    let candidates = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ];
    let mut ci = 0;
    while u_cols.len() < 3 {
        let mut cand = candidates[ci];
        ci += 1;
        for existing in &u_cols {
            let proj = dot3(cand, *existing);
            for r in 0..3 {
                cand[r] -= proj * existing[r];
            }
        }
        let len = norm3(cand);
        if len > 1e-8 {
            u_cols.push([cand[0] / len, cand[1] / len, cand[2] / len]);
        }
    }
    let mut u = [[0.0; 3]; 3];
    for (col, uc) in u_cols.iter().enumerate() {
        for row in 0..3 {
            u[row][col] = uc[row];
        }
    }
    Svd3 { u, v }
}

/// Optimal rigid superposition of `mobile` onto `reference` (Kabsch).
///
/// Both conformers must share the atom count and atom-type sequence. The
/// returned rotation is proper: when the unconstrained orthogonal optimum is
/// a reflection, the singular direction with the smallest singular value is
/// flipped.
pub fn kabsch_align(reference: &Conformer, mobile: &Conformer) -> Result<Alignment> {
    if !reference.same_species(mobile) {
        return Err(Error::AtomMismatch(
            "kabsch: atom count or type sequence differs".into(),
        ));
    }
    let n = reference.n_atoms();
    let rc = reference.centroid();
    let mc = mobile.centroid();
    let p: Vec<[f64; 3]> = mobile.coords().iter().map(|&r| sub3(r, mc)).collect();
    let q: Vec<[f64; 3]> = reference.coords().iter().map(|&r| sub3(r, rc)).collect();

    // Cross-covariance M = sum_i p_i q_i^T; the optimal rotation maximizes
    // tr(R M).
    let mut m = [[0.0; 3]; 3];
    for i in 0..n {
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] += p[i][a] * q[i][b];
            }
        }
    }

    let svd = svd3(&m);
    // R = V D U^T with D flipping the smallest singular direction if needed.
    let mut vut = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += svd.v[a][k] * svd.u[b][k];
            }
            vut[a][b] = s;
        }
    }
    let d = if det3(&vut) < 0.0 { -1.0 } else { 1.0 };
    let mut rot = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                let dk = if k == 2 { d } else { 1.0 };
                s += svd.v[a][k] * dk * svd.u[b][k];
            }
            rot[a][b] = s;
        }
    }

    let mut aligned = Vec::with_capacity(n);
    let mut ssd = 0.0;
    for i in 0..n {
        let rotated = [
            dot3([rot[0][0], rot[0][1], rot[0][2]], p[i]),
            dot3([rot[1][0], rot[1][1], rot[1][2]], p[i]),
            dot3([rot[2][0], rot[2][1], rot[2][2]], p[i]),
        ];
        let placed = [rotated[0] + rc[0], rotated[1] + rc[1], rotated[2] + rc[2]];
        let diff = sub3(placed, reference.coords()[i]);
        ssd += dot3(diff, diff);
        aligned.push(placed);
    }

    Ok(Alignment {
        rotation: rot,
        aligned,
        rmsd: (ssd / n as f64).sqrt(),
    })
}

/// RMSD after Kabsch superposition:
/// `sqrt((1/N) sum_i ||x_hat_i - x_i||^2)`.
pub fn rmsd(reference: &Conformer, mobile: &Conformer) -> Result<f64> {
    Ok(kabsch_align(reference, mobile)?.rmsd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_conformer;
    use crate::numerics::Rng;

    fn rotation_from_axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
        let len = norm3(axis);
        let (x, y, z) = (axis[0] / len, axis[1] / len, axis[2] / len);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    fn apply_rigid(c: &Conformer, rot: &[[f64; 3]; 3], shift: [f64; 3]) -> Conformer {
        let coords = c
            .coords()
            .iter()
            .map(|&r| {
                [
                    dot3([rot[0][0], rot[0][1], rot[0][2]], r) + shift[0],
                    dot3([rot[1][0], rot[1][1], rot[1][2]], r) + shift[1],
                    dot3([rot[2][0], rot[2][1], rot[2][2]], r) + shift[2],
                ]
            })
            .collect();
        c.with_coords(coords).unwrap()
    }

    #[test]
    fn identical_structures_align_exactly() {
        let mut rng = Rng::new(2);
        let c = random_conformer(&mut rng, 7, 1.5);
        let a = kabsch_align(&c, &c).unwrap();
        assert!(a.rmsd < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((a.rotation[i][j] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rigid_motion_recovered() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let c = random_conformer(&mut rng, 10, 2.0);
            let rot = rotation_from_axis_angle(
                [rng.normal(), rng.normal(), rng.normal()],
                rng.uniform_in(0.0, std::f64::consts::TAU),
            );
            let moved = apply_rigid(&c, &rot, [rng.normal(), rng.normal(), rng.normal()]);
            assert!(rmsd(&c, &moved).unwrap() < 1e-8);
        }
    }

    #[test]
    fn rmsd_is_symmetric() {
        let mut rng = Rng::new(4);
        for _ in 0..10 {
            let a = random_conformer(&mut rng, 6, 1.5);
            let b = a
                .with_coords(
                    a.coords()
                        .iter()
                        .map(|&r| [r[0] + rng.normal() * 0.3, r[1], r[2] + rng.normal() * 0.3])
                        .collect(),
                )
                .unwrap();
            let ab = rmsd(&a, &b).unwrap();
            let ba = rmsd(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-10, "{ab} vs {ba}");
        }
    }

    #[test]
    fn two_atom_stretched_bond() {
        // Bond lengths 1 vs 3: best superposition leaves each atom off by 1.
        let a = Conformer::new(vec![1, 1], vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
        let b = Conformer::new(vec![1, 1], vec![[-1.5, 0.0, 0.0], [1.5, 0.0, 0.0]]).unwrap();
        assert!((rmsd(&a, &b).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mismatched_species_rejected() {
        let a = Conformer::new(vec![1, 6], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let b = Conformer::new(vec![6, 1], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(kabsch_align(&a, &b).is_err());
    }
}
