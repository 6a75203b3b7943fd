//! Reaction-record persistence, XYZ I/O, dataset splitting, and the
//! synthetic-reaction oracle.
//!
//! A dataset is a directory with an `index.txt` (one whitespace-separated
//! record per line: id, relative paths to the reactant/product/transition
//! state XYZ files, provenance, optionally three energies) plus the geometry
//! files themselves under `structures/`.

pub mod synth;
pub mod xyz;

pub use synth::{synth_reactions, SyntheticSpec, Warp};
pub use xyz::{read_xyz, write_xyz, XyzFrame};

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Conformer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReactionEnergies {
    pub reactant: f64,
    pub product: f64,
    pub ts: f64,
}

/// Coupled (reactant, product, transition state) triple with metadata.
#[derive(Clone, Debug)]
pub struct ReactionRecord {
    pub id: String,
    pub reactant: Conformer,
    pub product: Conformer,
    pub ts: Conformer,
    pub energies: Option<ReactionEnergies>,
    pub provenance: String,
}

impl ReactionRecord {
    /// All three conformers must share the atom-type sequence.
    pub fn validate(&self) -> Result<()> {
        if !self.reactant.same_species(&self.product) || !self.reactant.same_species(&self.ts) {
            return Err(Error::AtomMismatch(format!(
                "record {}: conformers disagree on atom types",
                self.id
            )));
        }
        if self.id.is_empty() || self.id.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "record id {:?} must be nonempty without whitespace",
                self.id
            )));
        }
        Ok(())
    }
}

pub fn save_dataset(dir: &Path, records: &[ReactionRecord]) -> Result<()> {
    let structures = dir.join("structures");
    std::fs::create_dir_all(&structures)?;
    let mut index = String::new();
    index.push_str("# id\treactant\tproduct\tts\tprovenance[\te_r\te_p\te_ts]\n");
    for record in records {
        record.validate()?;
        let r_rel = format!("structures/{}_r.xyz", record.id);
        let p_rel = format!("structures/{}_p.xyz", record.id);
        let ts_rel = format!("structures/{}_ts.xyz", record.id);
        write_xyz(&dir.join(&r_rel), [(&record.reactant, record.id.as_str())])?;
        write_xyz(&dir.join(&p_rel), [(&record.product, record.id.as_str())])?;
        write_xyz(&dir.join(&ts_rel), [(&record.ts, record.id.as_str())])?;
        index.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            record.id, r_rel, p_rel, ts_rel, record.provenance
        ));
        if let Some(e) = &record.energies {
            index.push_str(&format!("\t{:.16e}\t{:.16e}\t{:.16e}", e.reactant, e.product, e.ts));
        }
        index.push('\n');
    }
    std::fs::write(dir.join("index.txt"), index)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<ReactionRecord>> {
    let index_path = dir.join("index.txt");
    let text = std::fs::read_to_string(&index_path)?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 && fields.len() != 8 {
            return Err(Error::Parse {
                line: line_no + 1,
                msg: format!("index row needs 5 or 8 fields, got {}", fields.len()),
            });
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                line: line_no + 1,
                msg: format!("duplicate record id {id:?}"),
            });
        }
        let load_single = |rel: &str| -> Result<Conformer> {
            let frames = read_xyz(&dir.join(rel))?;
            if frames.len() != 1 {
                return Err(Error::Parse {
                    line: line_no + 1,
                    msg: format!("{rel} holds {} frames, expected 1", frames.len()),
                });
            }
            Ok(frames.into_iter().next().unwrap().conformer)
        };
        let energies = if fields.len() == 8 {
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: line_no + 1,
                    msg: format!("bad energy {s:?}"),
                })
            };
            Some(ReactionEnergies {
                reactant: parse(fields[5])?,
                product: parse(fields[6])?,
                ts: parse(fields[7])?,
            })
        } else {
            None
        };
        let record = ReactionRecord {
            id,
            reactant: load_single(fields[1])?,
            product: load_single(fields[2])?,
            ts: load_single(fields[3])?,
            energies,
            provenance: fields[4].to_string(),
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn mix(seed: u64, value: u64) -> u64 {
    // One splitmix64 round over the seeded hash.
    let mut z = seed ^ value;
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic disjoint partition by id hash. A fraction of zero yields an
/// empty split; a positive fraction that happens to receive no records is an
/// error (the dataset is too small for the requested split).
pub fn split(
    records: &[ReactionRecord],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<ReactionRecord>, Vec<ReactionRecord>, Vec<ReactionRecord>)> {
    if fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::InvalidArgument("fractions must be nonnegative".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions must sum to 1, got {total}"
        )));
    }
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for record in records {
        let u = mix(seed, fnv1a(record.id.as_bytes())) as f64 / (u64::MAX as f64 + 1.0);
        if u < fractions[0] {
            out.0.push(record.clone());
        } else if u < fractions[0] + fractions[1] {
            out.1.push(record.clone());
        } else {
            out.2.push(record.clone());
        }
    }
    for (k, bucket) in [&out.0, &out.1, &out.2].iter().enumerate() {
        if fractions[k] > 0.0 && bucket.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "split {k} with fraction {} received no records (dataset too small)",
                fractions[k]
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample_records(n: usize) -> Vec<ReactionRecord> {
        let spec = SyntheticSpec {
            n_atoms_min: 3,
            n_atoms_max: 4,
            displacement: 0.3,
            warp_seed: 3,
            size: n,
        };
        synth_reactions(&spec, &mut Rng::new(33)).unwrap()
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = std::env::temp_dir().join("dgflow_dataset_roundtrip");
        std::fs::remove_dir_all(&dir).ok();
        let mut records = sample_records(4);
        records[1].energies = Some(ReactionEnergies {
            reactant: -1.25,
            product: -1.5,
            ts: -0.75,
        });
        save_dataset(&dir, &records).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.len(), records.len());
        for (a, b) in records.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.energies, b.energies);
            for (ca, cb) in [
                (&a.reactant, &b.reactant),
                (&a.product, &b.product),
                (&a.ts, &b.ts),
            ] {
                assert_eq!(ca.atomic_numbers(), cb.atomic_numbers());
                for (ra, rb) in ca.coords().iter().zip(cb.coords()) {
                    for k in 0..3 {
                        assert!((ra[k] - rb[k]).abs() < 1e-12);
                    }
                }
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = std::env::temp_dir().join("dgflow_dataset_dupe");
        std::fs::remove_dir_all(&dir).ok();
        let mut records = sample_records(2);
        records[1].id = records[0].id.clone();
        save_dataset(&dir, &records).unwrap();
        assert!(load_dataset(&dir).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn split_all_train() {
        let records = sample_records(6);
        let (train, val, test) = split(&records, [1.0, 0.0, 0.0], 5).unwrap();
        assert_eq!(train.len(), 6);
        assert!(val.is_empty() && test.is_empty());
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let records = sample_records(30);
        let a = split(&records, [0.6, 0.2, 0.2], 9).unwrap();
        let b = split(&records, [0.6, 0.2, 0.2], 9).unwrap();
        let ids = |v: &[ReactionRecord]| v.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.0), ids(&b.0));
        assert_eq!(ids(&a.1), ids(&b.1));
        assert_eq!(ids(&a.2), ids(&b.2));
        let mut all: Vec<String> = ids(&a.0);
        all.extend(ids(&a.1));
        all.extend(ids(&a.2));
        all.sort();
        let mut expected: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn tiny_dataset_with_positive_fraction_errors() {
        let records = sample_records(2);
        // Three-way split of two records must leave some positive-fraction
        // bucket empty.
        assert!(split(&records, [0.34, 0.33, 0.33], 1).is_err());
    }
}
