//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes   "PCS2" (seq2seq) or "PCTF" (transformer)
//! version      u32       1
//! digest       32 bytes  SHA-256 of the model config
//! count        u32       number of parameter blocks
//! per block, ordered by name:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   data       product(dims) × f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters keyed by name; iteration order is by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Uniform Glorot initialization for a `[fan_in, fan_out]` weight.
    pub fn init_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape"));
    }

    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let dist = rand_distr::Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample(dist)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("normal shape"));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, value));
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().fill(0.0);
        }
    }

    pub fn write_checkpoint(&self, w: &mut impl Write, magic: [u8; 4], digest: &[u8; 32]) -> std::io::Result<()> {
        w.write_all(&magic)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(digest)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint, returning the stored config digest with the parameters.
    pub fn read_checkpoint(r: &mut impl Read, magic: [u8; 4]) -> Result<([u8; 32], Self)> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated checkpoint: {e}"));
        let mut m = [0u8; 4];
        r.read_exact(&mut m).map_err(fmt)?;
        if m != magic {
            return Err(Error::Format(format!(
                "checkpoint magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = read_u32(r).map_err(fmt)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest).map_err(fmt)?;
        let count = read_u32(r).map_err(fmt)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(r).map_err(fmt)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(fmt)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let ndim = read_u32(r).map_err(fmt)? as usize;
            let dims = (0..ndim)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(fmt)?;
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| read_f64(r)).collect::<std::io::Result<Vec<_>>>().map_err(fmt)?;
            store.insert(name, Tensor::new(dims, data)?);
        }
        Ok((digest, store))
    }

    pub fn save(&self, path: &Path, magic: [u8; 4], digest: &[u8; 32]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w, magic, digest)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, magic: [u8; 4]) -> Result<([u8; 32], Self)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&mut std::io::BufReader::new(file), magic)
    }

    /// Copies values from `other` for every name both stores share with equal shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in self.params.iter_mut() {
            let src = other.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "assign",
                    lhs: t.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
