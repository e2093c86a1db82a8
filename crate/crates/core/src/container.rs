//! Named-array container: the on-disk format shared by extractor weight
//! files and training checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"NARC0001"
//! version  u32      format version (currently 1)
//! meta     u32 length + UTF-8 JSON metadata blob
//! count    u32      number of arrays
//! entry*   u16 name length + name bytes
//!          u8 rank, then rank * u32 dims
//!          dim-product * f64 values
//! ```
//!
//! Entries keep their write order, and `save` walks entries in insertion
//! order, so a load/save round trip is byte-identical. The loader rejects
//! wrong magic, unknown versions and truncated payloads outright; callers
//! validate names and shapes against what they expect.

use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"NARC0001";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct Container {
    pub meta: String,
    pub arrays: IndexMap<String, ArrayD<f64>>,
}

impl Container {
    pub fn new(meta: impl Into<String>) -> Self {
        Container {
            meta: meta.into(),
            arrays: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, array: ArrayD<f64>) {
        self.arrays.insert(name.into(), array);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Data(format!("container is missing array '{name}'")))
    }

    /// Fetches an array and checks its shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&ArrayD<f64>> {
        let a = self.get(name)?;
        if a.shape() != shape {
            return Err(Error::Shape(format!(
                "array '{name}' has shape {:?}, expected {:?}",
                a.shape(),
                shape
            )));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let meta = self.meta.as_bytes();
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta)?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, array) in &self.arrays {
            let name = name.as_bytes();
            if name.len() > u16::MAX as usize {
                return Err(Error::Data("array name too long".into()));
            }
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            let shape = array.shape();
            w.write_all(&[shape.len() as u8])?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let contiguous;
            let values = match array.as_slice() {
                Some(s) => s,
                None => {
                    contiguous = array.to_owned();
                    contiguous.as_slice().expect("owned array is contiguous")
                }
            };
            for &v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let corrupt = |what: &str| Error::Data(format!("corrupt container ({what}): {path:?}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("magic"))?;
        if &magic != MAGIC {
            return Err(Error::Data(format!("not a named-array container: {path:?}")));
        }
        let version = read_u32(&mut r).map_err(|_| corrupt("version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported container version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = read_u32(&mut r).map_err(|_| corrupt("meta length"))? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(|_| corrupt("meta"))?;
        let meta = String::from_utf8(meta).map_err(|_| corrupt("meta utf-8"))?;
        let count = read_u32(&mut r).map_err(|_| corrupt("count"))?;
        let mut arrays = IndexMap::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r).map_err(|_| corrupt("name length"))? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| corrupt("name"))?;
            let name = String::from_utf8(name).map_err(|_| corrupt("name utf-8"))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank).map_err(|_| corrupt("rank"))?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(&mut r).map_err(|_| corrupt("dims"))? as usize);
            }
            let len: usize = shape.iter().product();
            let mut values = vec![0f64; len];
            let mut buf = [0u8; 8];
            for v in &mut values {
                r.read_exact(&mut buf).map_err(|_| corrupt("values"))?;
                *v = f64::from_le_bytes(buf);
            }
            let array = ArrayD::from_shape_vec(IxDyn(&shape), values)
                .map_err(|_| corrupt("shape/value mismatch"))?;
            arrays.insert(name, array);
        }
        // Anything after the last entry means the writer and reader disagree.
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(Error::Io)? != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Container { meta, arrays })
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}
