//! Checkpoint container. Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "POSEREG\0"
//! 8       4     format version (u32), currently 1
//! 12      8     model config digest (u64, FNV-1a over canonical config text)
//! 20      8     epochs completed (u64)
//! 28      8     parameter record count (u64)
//! 36      ...   records, each:
//!               name length (u32), name (UTF-8 bytes),
//!               ndim (u32), dims (u64 each),
//!               values (f64 LE, prod(dims) of them),
//!               velocity (f64 LE, prod(dims) of them)
//! ```
//!
//! Records appear in the model's stable parameter order. Loading verifies
//! magic, version, and exact length; applying to a model verifies the config
//! digest and every name/shape.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::OptimizerState;

const MAGIC: &[u8; 8] = b"POSEREG\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: u64,
    pub epochs_completed: u64,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    /// Snapshot a model and its optimizer velocities. `state` is None for a
    /// pre-training snapshot (zero velocities).
    pub fn from_model(
        model: &Model,
        state: Option<&OptimizerState>,
        epochs_completed: u64,
    ) -> Result<Checkpoint> {
        let named = model.named_parameters();
        if let Some(st) = state {
            if st.velocity.len() != named.len() {
                return Err(Error::Checkpoint(format!(
                    "{} velocity buffers for {} parameters",
                    st.velocity.len(),
                    named.len()
                )));
            }
        }
        let params = named
            .iter()
            .enumerate()
            .map(|(i, (name, t))| ParamRecord {
                name: name.clone(),
                shape: t.shape(),
                values: t.values(),
                velocity: match state {
                    Some(st) => st.velocity[i].clone(),
                    None => vec![0.0; t.len()],
                },
            })
            .collect();
        Ok(Checkpoint { config_digest: model.config.digest(), epochs_completed, params })
    }

    /// Copy weights into `model` and velocities into `state`, verifying the
    /// config digest and every record name/shape.
    pub fn apply(&self, model: &Model, state: Option<&mut OptimizerState>) -> Result<()> {
        let digest = model.config.digest();
        if digest != self.config_digest {
            return Err(Error::Checkpoint(format!(
                "config digest mismatch: checkpoint {:016x}, model {:016x}",
                self.config_digest, digest
            )));
        }
        let named = model.named_parameters();
        if named.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} records, model has {} parameters",
                self.params.len(),
                named.len()
            )));
        }
        for (record, (name, tensor)) in self.params.iter().zip(&named) {
            if &record.name != name || record.shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "record '{}' {:?} does not match parameter '{}' {:?}",
                    record.name,
                    record.shape,
                    name,
                    tensor.shape()
                )));
            }
            tensor.set_values(&record.values);
        }
        if let Some(st) = state {
            if st.velocity.len() != self.params.len() {
                return Err(Error::Checkpoint("optimizer buffer count mismatch".into()));
            }
            for (record, v) in self.params.iter().zip(st.velocity.iter_mut()) {
                v.copy_from_slice(&record.velocity);
            }
        }
        Ok(())
    }

    /// Total size of the f64 parameter payload (excluding velocities).
    pub fn parameter_bytes(&self) -> usize {
        self.params.iter().map(|p| p.values.len() * 8).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config_digest.to_le_bytes());
        buf.extend_from_slice(&self.epochs_completed.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(p.name.as_bytes());
            buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let n: usize = p.shape.iter().product();
            if p.values.len() != n || p.velocity.len() != n {
                return Err(Error::Checkpoint(format!(
                    "record '{}' shape {:?} does not match payload lengths",
                    p.name, p.shape
                )));
            }
            for v in &p.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &p.velocity {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };

        let magic = cur.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {VERSION}"
            )));
        }
        let config_digest = cur.u64()?;
        let epochs_completed = cur.u64()?;
        let count = cur.u64()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let ndim = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let values = cur.f64s(n)?;
            let velocity = cur.f64s(n)?;
            params.push(ParamRecord { name, shape, values, velocity });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last record",
                bytes.len() - cur.pos
            )));
        }
        Ok(Checkpoint { config_digest, epochs_completed, params })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
