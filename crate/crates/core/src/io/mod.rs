//! On-disk formats, synthetic data and experiment configuration.
//!
//! All binary formats are little-endian. Loaders report the byte offset of
//! the first problem they find; savers write to a temporary file in the
//! destination directory and rename it into place.

mod checkpoint;
mod config;
mod container;
mod stats;
mod synthetic;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint};
pub use config::{AdversarialTraining, Architecture, DataConfig, ExperimentConfig, NamedAttack, Schedule, Seeds};
pub use container::{
    attack_set_from_container, attack_set_to_container, dataset_from_container, dataset_to_container, load_attack_set,
    load_dataset, save_attack_set, save_dataset, Record, TensorContainer,
};
pub use stats::{load_statistics, save_statistics, statistics_from_bytes, statistics_to_bytes};
pub use synthetic::{generate_synthetic_dataset, MIN_IMAGE_SIZE};

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub(crate) struct Writer(Vec<u8>);

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut w = Self(Vec::new());
        w.bytes(magic);
        w.u16(version);
        w
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.0.reserve(values.len() * 4);
        for v in values {
            self.bytes(&v.to_le_bytes());
        }
    }

    /// u32 length prefix, then the bytes.
    pub fn blob(&mut self, b: &[u8]) -> Result<()> {
        self.u32(len_u32(b.len(), "blob")?);
        self.bytes(b);
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

pub(crate) fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidParameter(format!("{what} too large for the file format")))
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks the 4-byte magic and the version.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self> {
        let mut r = Self { bytes, pos: 0 };
        if r.take(4)? != magic {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let found = r.u16()?;
        if found != version {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {found}, expected {version}"),
            });
        }
        Ok(r)
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn fail(&self, at: u64, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: at,
            reason: reason.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                expected: n as u64,
                actual: remaining as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice of requested length"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| self.fail(self.offset(), "payload size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect())
    }

    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    /// Fails if bytes are left over.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(
                self.offset(),
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Reads `rank u8, dims u32 × rank` and the element count they imply.
pub(crate) fn read_shape(r: &mut Reader<'_>) -> Result<Vec<usize>> {
    let at = r.offset();
    let rank = r.u8()? as usize;
    if rank == 0 {
        return Err(r.fail(at, "tensor rank must be at least 1"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(r.fail(at, "tensor dimensions must be positive"));
        }
        shape.push(d);
    }
    if shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
        return Err(r.fail(at, "tensor size overflows"));
    }
    Ok(shape)
}

pub(crate) fn write_shape(w: &mut Writer, shape: &[usize]) -> Result<()> {
    let rank = u8::try_from(shape.len()).map_err(|_| Error::InvalidParameter("tensor rank above 255".into()))?;
    w.u8(rank);
    for &d in shape {
        w.u32(len_u32(d, "tensor dimension")?);
    }
    Ok(())
}
