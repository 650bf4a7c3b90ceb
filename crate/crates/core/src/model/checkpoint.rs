//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic    b"DASCKPT\0"
//! version  u32
//! V d l h C  u64 × 5
//! vocab    32-byte SHA-256 of the vocabulary
//! E W b F_w F_b   f64 arrays, row-major, in that order
//! ```

use std::fs;
use std::path::Path;

use super::ModelParams;
use crate::error::{DasError, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DASCKPT\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab_hash: [u8; 32],
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, vocab_hash: &[u8; 32]) -> Result<()> {
    let floats: usize = params.tensors().iter().map(|t| t.len()).sum();
    let mut buf = Vec::with_capacity(8 + 4 + 40 + 32 + floats * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [
        params.vocab_len(),
        params.embedding_dim(),
        params.window,
        params.hidden(),
        params.classes(),
    ] {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    buf.extend_from_slice(vocab_hash);
    for t in params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| DasError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DasError::Data("checkpoint is truncated".into()));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| DasError::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let bad = |msg: &str| DasError::Data(format!("{}: {msg}", path.display()));
    if r.take(8).map_err(|_| bad("not a checkpoint"))? != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let (v, d, l, h, c) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    if [v, d, l, h, c].contains(&0) || v.saturating_mul(d) > bytes.len() {
        return Err(bad("corrupt header"));
    }
    let vocab_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let params = ModelParams {
        embedding: r.tensor(&[v, d])?,
        conv_w: r.tensor(&[h, l * d])?,
        conv_b: r.tensor(&[h])?,
        out_w: r.tensor(&[c, h])?,
        out_b: r.tensor(&[c])?,
        window: l,
    };
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    params.check()?;
    Ok(Checkpoint { params, vocab_hash })
}
