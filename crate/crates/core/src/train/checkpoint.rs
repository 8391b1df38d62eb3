//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SPRTCKPT" | version u32 | config hash (len u32 + utf8)
//! model config json (len u32 + utf8) | num_users u64 | num_items u64
//! trained_through i64 (−1 = none) | onboarded users u64 | onboarded items u64
//! tensor count u64 | per tensor: name (len u32 + utf8), rows u64, cols u64,
//!                    trainable u8, frozen_rows u64, rows·cols f64 values
//! ```

use std::path::Path;

use super::{ModelState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numeric::{AdamState, DenseMatrix, ParamSet, ParamTensor};

pub const MAGIC: &[u8; 8] = b"SPRTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub state: ModelState,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

pub fn encode(state: &ModelState, config: &TrainConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    put_str(&mut out, &config.hash());
    put_str(
        &mut out,
        &serde_json::to_string(&state.model.config).expect("config serializes"),
    );
    out.extend((state.model.num_users() as u64).to_le_bytes());
    out.extend((state.model.num_items() as u64).to_le_bytes());
    out.extend(state.trained_through.map_or(-1i64, |t| t as i64).to_le_bytes());
    out.extend((state.onboarded_from.0 as u64).to_le_bytes());
    out.extend((state.onboarded_from.1 as u64).to_le_bytes());
    out.extend((state.model.params.len() as u64).to_le_bytes());
    for t in state.model.params.iter() {
        put_str(&mut out, &t.name);
        out.extend((t.value.rows() as u64).to_le_bytes());
        out.extend((t.value.cols() as u64).to_le_bytes());
        out.push(u8::from(t.trainable));
        out.extend((t.frozen_rows as u64).to_le_bytes());
        for v in t.value.as_slice() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_hash = r.string()?;
    let config: ModelConfig =
        serde_json::from_str(&r.string()?).map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
    let num_users = r.usize()?;
    let num_items = r.usize()?;
    let trained = r.i64()?;
    let onboarded_from = (r.usize()?, r.usize()?);
    let count = r.usize()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.usize()?;
        let cols = r.usize()?;
        let trainable = r.take(1)?[0] != 0;
        let frozen_rows = r.usize()?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        if len.saturating_mul(8) > bytes.len() - r.pos {
            return Err(Error::Checkpoint(format!("truncated tensor {name}")));
        }
        let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let value =
            DenseMatrix::from_vec(rows, cols, values).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        let mut t = ParamTensor::new(name, value);
        t.trainable = trainable;
        t.frozen_rows = frozen_rows;
        params.push(t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let model = Model::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if (model.num_users(), model.num_items()) != (num_users, num_items) {
        return Err(Error::Checkpoint("vocabulary sizes disagree with tables".into()));
    }
    let optimizer = AdamState::new(&model.params);
    Ok(Checkpoint {
        config_hash,
        state: ModelState {
            model,
            optimizer,
            trained_through: usize::try_from(trained).ok(),
            onboarded_from,
        },
    })
}

pub fn save_checkpoint(path: &Path, state: &ModelState, config: &TrainConfig) -> Result<()> {
    std::fs::write(path, encode(state, config)).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint. Optimizer moments are not stored; the loaded state
/// carries fresh ones, as every segment starts with.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
