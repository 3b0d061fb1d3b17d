//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "TISACKPT"
//! version    u32
//! header     u64 length + UTF-8 JSON (model and vocab config, run config echo)
//! count      u32
//! count × {  name: u32 length + UTF-8 bytes
//!            rows: u64, cols: u64
//!            data: rows·cols × f64 }
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tisa_autodiff::Tensor;

use super::{ModelConfig, Planner, PlannerParams};
use crate::action_space::VocabConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TISACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub vocab: VocabConfig,
    /// Free-form provenance, typically the run config that produced it.
    #[serde(default)]
    pub echo: serde_json::Value,
}

fn encode(planner: &Planner, echo: &serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: planner.config.clone(),
        vocab: planner.vocab.config().clone(),
        echo: echo.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(planner.params.scalar_count() * 8 + json.len() + 64);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(planner.params.len() as u32).to_le_bytes());
    for (name, t) in planner.params.names().iter().zip(planner.params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, planner: &Planner, echo: &serde_json::Value) -> Result<()> {
    let bytes = encode(planner, echo)?;
    crate::io::write_atomic(path, &bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, v: u64) -> Result<usize> {
        usize::try_from(v).map_err(|_| Error::format("checkpoint", "length overflows"))
    }
}

/// Parses a checkpoint from bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Planner, CheckpointHeader)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let n = c.u64()?;
    let n = c.len(n)?;
    let header: CheckpointHeader =
        serde_json::from_slice(c.take(n)?).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    header.model.validate()?;
    header.vocab.validate()?;
    let count = c.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = String::from_utf8(c.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint", "non-UTF-8 name"))?;
        let rows = c.u64()?;
        let rows = c.len(rows)?;
        let cols = c.u64()?;
        let cols = c.len(cols)?;
        let size = rows
            .checked_mul(cols)
            .and_then(|s| s.checked_mul(8))
            .ok_or_else(|| Error::format("checkpoint", "array too large"))?;
        let raw = c.take(size)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        named.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    let vocab_size = header.vocab.size();
    let params = PlannerParams::from_named(&header.model, vocab_size, named)?;
    let planner = Planner::with_params(&header.model, &header.vocab, params)?;
    Ok((planner, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(Planner, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Writes the checkpoint bytes to any sink.
pub fn write_checkpoint<W: Write>(mut out: W, planner: &Planner, echo: &serde_json::Value) -> Result<()> {
    let bytes = encode(planner, echo)?;
    out.write_all(&bytes).map_err(|e| Error::io("<checkpoint stream>", e))
}
