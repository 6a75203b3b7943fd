//! Model checkpoint container.
//!
//! Self-describing binary layout, little-endian throughout:
//!
//! ```text
//! magic   b"DGFW"
//! version u32 (currently 1)
//! blocks, atom_dim, pair_dim, rbf_count   u32 each
//! cutoff  f64
//! count   u32
//! count x { name_len u16, name utf-8, ndim u8, dims u32 each, values f64 each }
//! ```
//!
//! Tensors appear in the canonical traversal order and are verified by name
//! and shape on load, so a round trip is byte-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::tsdvnet::{ModelParams, NetConfig};

const MAGIC: &[u8; 4] = b"DGFW";
const VERSION: u32 = 1;

pub fn save(model: &ModelParams, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let c = model.config();
    for v in [c.blocks as u32, c.atom_dim as u32, c.pair_dim as u32, c.rbf_count as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&c.cutoff.to_le_bytes());
    let named = model.named();
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("parameter name too long: {name}")));
        }
        buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(bytes);
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Parse {
                line: 0,
                msg: "checkpoint truncated".into(),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: "not a dgflow checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let config = NetConfig {
        blocks: r.u32()? as usize,
        atom_dim: r.u32()? as usize,
        pair_dim: r.u32()? as usize,
        rbf_count: r.u32()? as usize,
        cutoff: r.f64()?,
    };
    config.validate()?;
    let count = r.u32()? as usize;

    let mut tensors = Vec::with_capacity(count);
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Parse {
            line: 0,
            msg: "parameter name is not utf-8".into(),
        })?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(r.f64()?);
        }
        names.push(name);
        tensors.push(Tensor::new(shape, values)?);
    }
    if r.pos != data.len() {
        return Err(Error::Parse {
            line: 0,
            msg: "trailing bytes after checkpoint payload".into(),
        });
    }

    // Build the structural template and verify the stored layout against it.
    let mut template = ModelParams::init(config, &mut Rng::new(0))?;
    let expected = template.named();
    if expected.len() != count {
        return Err(Error::Parse {
            line: 0,
            msg: format!("checkpoint has {count} tensors, config implies {}", expected.len()),
        });
    }
    for ((expected_name, expected_tensor), (name, tensor)) in
        expected.iter().zip(names.iter().zip(&tensors))
    {
        if expected_name != name {
            return Err(Error::Parse {
                line: 0,
                msg: format!("parameter order mismatch: {name} where {expected_name} expected"),
            });
        }
        if expected_tensor.shape() != tensor.shape() {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "parameter {name}: shape {:?} vs expected {:?}",
                    tensor.shape(),
                    expected_tensor.shape()
                ),
            });
        }
    }
    template.set_from_vec(tensors)?;
    Ok(template)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelParams {
        let config = NetConfig {
            blocks: 1,
            atom_dim: 8,
            pair_dim: 6,
            rbf_count: 4,
            cutoff: 12.0,
        };
        ModelParams::init(config, &mut Rng::new(77)).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let dir = std::env::temp_dir().join("dgflow_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path_a = dir.join("a.dgfw");
        let path_b = dir.join("b.dgfw");
        let model = toy();
        save(&model, &path_a).unwrap();
        let loaded = load(&path_a).unwrap();
        save(&loaded, &path_b).unwrap();
        let bytes_a = std::fs::read(&path_a).unwrap();
        let bytes_b = std::fs::read(&path_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(model.config(), loaded.config());
        for (a, b) in model.to_vec().iter().zip(loaded.to_vec().iter()) {
            assert_eq!(a, b);
        }
        std::fs::remove_file(&path_a).ok();
        std::fs::remove_file(&path_b).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("dgflow_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.dgfw");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(load(&path).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_rejected() {
        let dir = std::env::temp_dir().join("dgflow_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.dgfw");
        let model = toy();
        save(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
