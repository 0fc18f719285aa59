//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SWINFERC"
//! version    u32      1
//! precision  u8       32 or 64 (mode the run used)
//! flags      u8       bit 0: momentum buffers present
//! epoch      u32
//! best_acc   f64      best validation accuracy so far
//! config     u32 length + UTF-8 text of the run config
//! count      u32      number of tensors
//! tensors    count × (u16 name length, name, u8 rank, rank × u32 dims, f32 values)
//! velocity   if flagged, count × f32 values with the shapes above
//! crc32      u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, RunConfig};
use crate::error::{Error, Result};
use crate::swin::SwinModel;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"SWINFERC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub precision: Precision,
    /// Zero-based epoch the weights were taken after.
    pub epoch: usize,
    pub best_val_acc: f64,
    pub params: Vec<(String, Tensor<f32>)>,
    pub velocity: Option<Vec<Tensor<f32>>>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(
        model: &SwinModel<T>,
        config: &RunConfig,
        epoch: usize,
        best_val_acc: f64,
        velocity: Option<&[Tensor<T>]>,
    ) -> Self {
        Checkpoint {
            config: config.clone(),
            precision: if T::BITS == 64 { Precision::F64 } else { Precision::F32 },
            epoch,
            best_val_acc,
            params: model.params.iter().map(|p| (p.name.clone(), p.value.cast())).collect(),
            velocity: velocity.map(|v| v.iter().map(Tensor::cast).collect()),
        }
    }

    /// Builds the architecture from the embedded config and loads the weights.
    pub fn to_model<T: Real>(&self) -> Result<SwinModel<T>> {
        // Initial values are overwritten, so the generator seed is irrelevant.
        let mut model = SwinModel::new(self.config.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        model.load_named(self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect())?;
        Ok(model)
    }

    /// Rejects a run config whose architecture or class mode differs from
    /// the one this checkpoint was trained with.
    pub fn check_compatible(&self, config: &RunConfig) -> Result<()> {
        let (a, b) = (&self.config.model, &config.model);
        if a.use_se != b.use_se {
            return Err(Error::Config(format!(
                "checkpoint has use_se = {}, requested use_se = {}",
                a.use_se, b.use_se
            )));
        }
        if self.config.classes != config.classes {
            return Err(Error::Config(format!(
                "checkpoint is {}-class, requested {}-class",
                self.config.classes.num_classes(),
                config.classes.num_classes()
            )));
        }
        let strip = |m: &crate::swin::SwinConfig| crate::swin::SwinConfig { drop_rate: 0.0, ..m.clone() };
        if strip(a) != strip(b) {
            return Err(Error::Config("checkpoint architecture differs from the requested config".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.precision.bits() as u8);
        out.push(self.velocity.is_some() as u8);
        out.extend_from_slice(&(self.epoch as u32).to_le_bytes());
        out.extend_from_slice(&self.best_val_acc.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(vel) = &self.velocity {
            for t in vel {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.fail_at(0, "bad magic; not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail_at(8, &format!("format version {version}, this build reads {VERSION}")));
        }
        let precision = match r.u8()? {
            32 => Precision::F32,
            64 => Precision::F64,
            b => return Err(r.fail_at(r.pos - 1, &format!("precision byte {b}"))),
        };
        let flags = r.u8()?;
        let epoch = r.u32()? as usize;
        let best_val_acc = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let text_len = r.u32()? as usize;
        let text_at = r.pos;
        let text = std::str::from_utf8(r.take(text_len)?).map_err(|_| r.fail_at(text_at, "config is not UTF-8"))?;
        let config = RunConfig::parse(text).map_err(|e| r.fail_at(text_at, &format!("embedded config: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        let mut shapes = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.fail_at(name_at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data_at = r.pos;
            let values = r.f32s(shape.iter().product())?;
            let t = Tensor::new(&shape, values).map_err(|e| r.fail_at(data_at, &format!("tensor {name}: {e}")))?;
            shapes.push(shape);
            params.push((name, t));
        }
        let velocity = if flags & 1 == 1 {
            let mut v = Vec::with_capacity(count);
            for shape in &shapes {
                v.push(Tensor::new(shape, r.f32s(shape.iter().product())?)?);
            }
            Some(v)
        } else {
            None
        };
        let crc_at = r.pos;
        let stored = r.u32()?;
        if crc32fast::hash(&bytes[..crc_at]) != stored {
            return Err(r.fail_at(crc_at, "checksum mismatch"));
        }
        if r.pos != bytes.len() {
            return Err(r.fail_at(r.pos, "trailing bytes after checksum"));
        }
        Ok(Checkpoint { config, precision, epoch, best_val_acc, params, velocity })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail_at(&self, offset: usize, reason: &str) -> Error {
        Error::Integrity { offset: offset as u64, reason: reason.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail_at(self.bytes.len(), &format!("truncated: needed {n} bytes at offset {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.fail_at(self.pos, "tensor size overflows"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}
