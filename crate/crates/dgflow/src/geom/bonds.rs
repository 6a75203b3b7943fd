//! Bond inference from covalent radii and bond-change classification.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geom::{elements, pairwise_distances, Conformer};

/// Embedded covalent-radius table (symbol, angstrom per line).
const RADII_ASSET: &str = include_str!("../../assets/covalent_radii.txt");

/// Bond criterion scale: bonded iff d <= SCALE * (r_i + r_j).
pub const BOND_SCALE: f64 = 1.2;

fn radius_table() -> &'static Vec<(u8, f64)> {
    static TABLE: OnceLock<Vec<(u8, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::new();
        for line in RADII_ASSET.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let symbol = parts.next().expect("radius line has symbol");
            let radius: f64 = parts
                .next()
                .expect("radius line has value")
                .parse()
                .expect("radius parses");
            let z = elements::atomic_number(symbol).expect("radius table symbol is an element");
            table.push((z, radius));
        }
        table
    })
}

/// Covalent radius in angstroms for the given atomic number, if tabulated.
pub fn covalent_radius(z: u8) -> Option<f64> {
    radius_table().iter().find(|&&(tz, _)| tz == z).map(|&(_, r)| r)
}

/// Bonded atom pairs (i < j): `d_ij <= 1.2 * (r_cov(Z_i) + r_cov(Z_j))`.
pub fn infer_bonds(conformer: &Conformer) -> Result<BTreeSet<(usize, usize)>> {
    let n = conformer.n_atoms();
    let mut radii = Vec::with_capacity(n);
    for &z in conformer.atomic_numbers() {
        match covalent_radius(z) {
            Some(r) => radii.push(r),
            None => {
                return Err(Error::UnknownElement(format!(
                    "no covalent radius for {} (Z={z})",
                    elements::symbol(z).unwrap_or("?")
                )))
            }
        }
    }
    let d = pairwise_distances(conformer);
    let mut bonds = BTreeSet::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if d.get(i, j) <= BOND_SCALE * (radii[i] + radii[j]) {
                bonds.insert((i, j));
            }
        }
    }
    Ok(bonds)
}

/// How a pair's bonding changes between reactant and product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BondChangeLabel {
    /// Bonded in both.
    Unchanged,
    /// Bonded in the reactant only.
    Broken,
    /// Bonded in the product only.
    Formed,
    /// Bonded in neither.
    NeverBonded,
}

/// One label per unordered atom pair.
#[derive(Clone, Debug)]
pub struct BondChanges {
    n: usize,
    labels: Vec<BondChangeLabel>,
}

impl BondChanges {
    pub fn n_atoms(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> BondChangeLabel {
        assert!(i != j, "no label for the diagonal");
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // Index into the strict upper triangle.
        let offset = i * self.n - i * (i + 1) / 2 + (j - i - 1);
        self.labels[offset]
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = ((usize, usize), BondChangeLabel)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
            .zip(self.labels.iter().copied())
    }

    pub fn count(&self, label: BondChangeLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Classify every unordered pair by its bonding in reactant vs product.
pub fn classify_bond_changes(reactant: &Conformer, product: &Conformer) -> Result<BondChanges> {
    if !reactant.same_species(product) {
        return Err(Error::AtomMismatch(
            "bond changes need a consistent atom ordering".into(),
        ));
    }
    let rb = infer_bonds(reactant)?;
    let pb = infer_bonds(product)?;
    let n = reactant.n_atoms();
    let mut labels = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let pair = (i, j);
            let label = match (rb.contains(&pair), pb.contains(&pair)) {
                (true, true) => BondChangeLabel::Unchanged,
                (true, false) => BondChangeLabel::Broken,
                (false, true) => BondChangeLabel::Formed,
                (false, false) => BondChangeLabel::NeverBonded,
            };
            labels.push(label);
        }
    }
    Ok(BondChanges { n, labels })
}
