//! XYZ geometry files: atom-count line, comment line, then one
//! `Symbol x y z` line per atom. Multi-frame files simply repeat the block.
//! Coordinates are written with 17 significant digits so f64 values survive
//! a round trip.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{elements, Conformer};

#[derive(Clone, Debug)]
pub struct XyzFrame {
    pub conformer: Conformer,
    pub comment: String,
}

pub fn read_xyz(path: &Path) -> Result<Vec<XyzFrame>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    parse_xyz(&lines)
}

fn parse_xyz(lines: &[String]) -> Result<Vec<XyzFrame>> {
    let mut frames = Vec::new();
    let mut cursor = 0usize;
    while cursor < lines.len() {
        // Allow trailing blank lines between/after frames.
        if lines[cursor].trim().is_empty() {
            cursor += 1;
            continue;
        }
        let count_line = cursor;
        let n: usize = lines[count_line].trim().parse().map_err(|_| Error::Parse {
            line: count_line + 1,
            msg: format!("expected an atom count, got {:?}", lines[count_line]),
        })?;
        if n == 0 {
            return Err(Error::Parse {
                line: count_line + 1,
                msg: "atom count must be positive".into(),
            });
        }
        if count_line + 1 >= lines.len() {
            return Err(Error::Parse {
                line: count_line + 2,
                msg: "missing comment line".into(),
            });
        }
        let comment = lines[count_line + 1].clone();
        let mut z = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        for k in 0..n {
            let idx = count_line + 2 + k;
            let line = lines.get(idx).ok_or(Error::Parse {
                line: idx + 1,
                msg: format!("frame declared {n} atoms but the file ended early"),
            })?;
            let mut parts = line.split_whitespace();
            let symbol = parts.next().ok_or(Error::Parse {
                line: idx + 1,
                msg: "empty atom line".into(),
            })?;
            let zi = elements::atomic_number(symbol).ok_or(Error::Parse {
                line: idx + 1,
                msg: format!("unknown element symbol {symbol:?}"),
            })?;
            let mut xyz = [0.0; 3];
            for slot in xyz.iter_mut() {
                let field = parts.next().ok_or(Error::Parse {
                    line: idx + 1,
                    msg: "atom line needs three coordinates".into(),
                })?;
                *slot = field.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad coordinate {field:?}"),
                })?;
            }
            z.push(zi);
            coords.push(xyz);
        }
        let conformer = Conformer::new(z, coords).map_err(|e| Error::Parse {
            line: count_line + 1,
            msg: e.to_string(),
        })?;
        frames.push(XyzFrame { conformer, comment });
        cursor = count_line + 2 + n;
    }
    if frames.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no frames in file".into(),
        });
    }
    Ok(frames)
}

pub fn write_xyz<'a>(
    path: &Path,
    frames: impl IntoIterator<Item = (&'a Conformer, &'a str)>,
) -> Result<()> {
    let mut out = String::new();
    for (conformer, comment) in frames {
        format_frame(&mut out, conformer, comment)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub(crate) fn format_frame(out: &mut String, conformer: &Conformer, comment: &str) -> Result<()> {
    use std::fmt::Write as _;
    writeln!(out, "{}", conformer.n_atoms()).unwrap();
    writeln!(out, "{comment}").unwrap();
    for (z, r) in conformer.atomic_numbers().iter().zip(conformer.coords()) {
        let symbol = elements::symbol(*z)
            .ok_or_else(|| Error::UnknownElement(format!("atomic number {z}")))?;
        writeln!(out, "{symbol:<2} {:.16e} {:.16e} {:.16e}", r[0], r[1], r[2]).unwrap();
    }
    Ok(())
}
