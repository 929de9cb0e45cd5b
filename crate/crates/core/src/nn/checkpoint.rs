//! `CRNW` checkpoint files: an ordered manifest of named `f64` tensors.
//!
//! ```text
//! "CRNW"  u16 version  u32 count
//! count × { u32 name_len, name (UTF-8), u32 rank, rank × u32 dim, f64 data }
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::bytes::{product_checked, ByteReader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"CRNW";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(name, Tensor::scalar(value));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::State(format!("checkpoint has no tensor named {name:?}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(Error::Shape(format!("{name:?} is not a scalar: {:?}", t.shape())));
        }
        Ok(t.data()[0])
    }

    /// Reads a scalar holding a non-negative integer.
    pub fn count(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::State(format!("{name:?} = {v} is not a count")));
        }
        Ok(v as usize)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(MAGIC)?;
        let at = r.position();
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32("tensor count")? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.position();
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| Error::format(at, format!("tensor name is not UTF-8: {e}")))?
                .to_owned();
            let at = r.position();
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::format(at, format!("tensor {name:?} has unsupported rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dimension")? as usize);
            }
            let at = r.position();
            let len = product_checked(&dims, at)?;
            let data = r.f64s(len, "tensor data")?;
            let tensor = Tensor::new(dims, data).map_err(|e| Error::format(at, format!("tensor {name:?}: {e}")))?;
            if ckpt.contains(&name) {
                return Err(Error::format(at, format!("duplicate tensor name {name:?}")));
            }
            ckpt.entries.push((name, tensor));
        }
        r.finish()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
