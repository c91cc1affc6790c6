//! `ADVC` checkpoint file.
//!
//! ```text
//! "ADVC" | version u16 | config JSON (u32 length) | training metadata JSON (u32 length)
//! parameter count u32 | per parameter: rank u8, dims u32 × rank, f32 payload
//! ```

use std::fs;
use std::path::Path;

use crate::classifier::{Checkpoint, Model, ModelConfig, TrainingMeta};
use crate::error::Result;
use crate::io::{len_u32, read_shape, write_atomic, write_shape, Reader, Writer};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ADVC";
const VERSION: u16 = 1;

pub fn checkpoint_to_bytes(checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.blob(&serde_json::to_vec(checkpoint.model.config())?)?;
    w.blob(&serde_json::to_vec(&checkpoint.meta)?)?;
    let params = checkpoint.model.params();
    w.u32(len_u32(params.len(), "parameter count")?);
    for p in params {
        write_shape(&mut w, p.shape())?;
        w.f32s(p.data());
    }
    Ok(w.finish())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, MAGIC, VERSION)?;
    let at = r.offset();
    let config: ModelConfig =
        serde_json::from_slice(r.blob()?).map_err(|e| r.fail(at, format!("model config: {e}")))?;
    let at = r.offset();
    let meta: TrainingMeta =
        serde_json::from_slice(r.blob()?).map_err(|e| r.fail(at, format!("training metadata: {e}")))?;
    let count = r.u32()?;
    let mut params = Vec::new();
    for _ in 0..count {
        let shape = read_shape(&mut r)?;
        let data = r.f32s(shape.iter().product())?;
        params.push(Tensor::new(shape, data)?);
    }
    r.finish()?;
    Ok(Checkpoint {
        model: Model::from_params(config, params)?,
        meta,
    })
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint_to_bytes(checkpoint)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}
