//! `ADVS` class-statistics file.
//!
//! ```text
//! "ADVS" | version u16 | n u32 | m u32
//! m distortion descriptors: kind u8 (0 median, 1 bit depth, 2 grayscale), parameter u32
//! model fingerprint [u8; 32] | counts u64 × n | μ f32 × (n · m · n), class-major
//! ```

use std::fs;
use std::path::Path;

use crate::classifier::Fingerprint;
use crate::detector::ClassStatistics;
use crate::distortions::{Distortion, DistortionSet};
use crate::error::Result;
use crate::io::{len_u32, write_atomic, Reader, Writer};

const MAGIC: &[u8; 4] = b"ADVS";
const VERSION: u16 = 1;

pub fn statistics_to_bytes(stats: &ClassStatistics) -> Result<Vec<u8>> {
    stats.validate()?;
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(len_u32(stats.n_classes(), "class count")?);
    w.u32(len_u32(stats.distortions.len(), "distortion count")?);
    for d in stats.distortions.as_slice() {
        let (kind, param) = match *d {
            Distortion::Median { window } => (0, len_u32(window, "median window")?),
            Distortion::BitDepth { bits } => (1, bits),
            Distortion::Grayscale => (2, 0),
        };
        w.u8(kind);
        w.u32(param);
    }
    w.bytes(&stats.fingerprint.0);
    for &c in &stats.counts {
        w.u64(c);
    }
    for mu in &stats.mu {
        w.f32s(mu);
    }
    Ok(w.finish())
}

pub fn statistics_from_bytes(bytes: &[u8]) -> Result<ClassStatistics> {
    let mut r = Reader::open(bytes, MAGIC, VERSION)?;
    let n = r.u32()? as usize;
    let at = r.offset();
    let m = r.u32()? as usize;
    if n == 0 || m == 0 {
        return Err(r.fail(at - 4, "class and distortion counts must be positive"));
    }
    let mut distortions = Vec::with_capacity(m.min(64));
    for _ in 0..m {
        let at = r.offset();
        let kind = r.u8()?;
        let param = r.u32()?;
        distortions.push(match kind {
            0 => Distortion::Median { window: param as usize },
            1 => Distortion::BitDepth { bits: param },
            2 => Distortion::Grayscale,
            k => return Err(r.fail(at, format!("unknown distortion kind {k}"))),
        });
    }
    let fingerprint = Fingerprint(r.take(32)?.try_into().expect("32 bytes"));
    let mut counts = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        counts.push(r.u64()?);
    }
    let mut mu = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        mu.push(r.f32s(n * m)?);
    }
    r.finish()?;
    let stats = ClassStatistics {
        mu,
        counts,
        distortions: DistortionSet::new(distortions)?,
        fingerprint,
    };
    stats.validate()?;
    Ok(stats)
}

pub fn save_statistics(path: &Path, stats: &ClassStatistics) -> Result<()> {
    write_atomic(path, &statistics_to_bytes(stats)?)
}

pub fn load_statistics(path: &Path) -> Result<ClassStatistics> {
    statistics_from_bytes(&fs::read(path)?)
}
