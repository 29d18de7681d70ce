//! Binary checkpoint format.
//!
//! ```text
//! "NTCK" | version u8 | count u32
//! count × ( name_len u16 | name utf-8 | rank u8 | rank × dim u32 | values f32... )
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"NTCK";
pub const VERSION: u8 = 1;

#[derive(Clone, PartialEq, Debug)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) {
        self.entries.push(Entry {
            name: name.into(),
            dims,
            values,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn push_store<T: Scalar>(&mut self, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.push(
                name,
                t.shape().dims().to_vec(),
                t.data().iter().map(|v| v.as_f32()).collect(),
            );
        }
    }

    /// Collects every entry whose dims fit a 4-D tensor into a store.
    pub fn to_store<T: Scalar>(&self, skip_prefix: &str) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for e in self.entries.iter().filter(|e| !e.name.starts_with(skip_prefix)) {
            if e.dims.len() > 4 {
                return Err(Error::format("checkpoint", format!("{} has rank {}", e.name, e.dims.len())));
            }
            let mut d = [1usize; 4];
            d[4 - e.dims.len()..].copy_from_slice(&e.dims);
            let t = Tensor::from_vec(
                Shape::new(d[0], d[1], d[2], d[3]),
                e.values.iter().map(|&v| T::of_f32(v)).collect(),
            )?;
            store.add(e.name.clone(), t);
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Version {
                expected: format!("checkpoint v{VERSION}"),
                found: format!("checkpoint v{version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(Error::Truncated("checkpoint"))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ck.push(name, dims, values);
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated("input")),
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }
}
