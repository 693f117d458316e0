//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SQSLCKPT"
//! version  u32
//! header   u64 length + JSON {config, vocab, meta}
//! params   u32 count, then per tensor:
//!          u32 name length, name, u32 rank, u64 dims…, f64 payload
//! moments  u32 count (0 or 2 × params), same tensor encoding
//! ```
//!
//! The whole file is decoded before anything is returned, so a truncated or
//! inconsistent file never yields a partially loaded model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelParams, Result};
use crate::corpus::vocab::Vocabulary;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SQSLCKPT";
pub const VERSION: u32 = 1;

/// Training bookkeeping stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Optimizer updates applied so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub best_valid_loss: Option<f64>,
    /// True for the ablation checkpoint trained with `p_gen` pinned to 1.
    pub no_copy: bool,
}

/// AdamW moments, one vector per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub meta: CheckpointMeta,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.model.config,
            vocab: self.vocab.tokens().to_vec(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let params = &self.model.params;
        out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
        for (name, t) in params.names.iter().zip(&params.tensors) {
            write_tensor(&mut out, name, t.shape(), t.data());
        }
        match &self.optimizer {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(opt) => {
                out.extend_from_slice(&(2 * params.tensors.len() as u32).to_le_bytes());
                for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
                    for ((name, t), mom) in params.names.iter().zip(&params.tensors).zip(moments) {
                        write_tensor(&mut out, &format!("{kind}/{name}"), t.shape(), mom);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let (name, shape, data) = r.tensor()?;
            names.push(name);
            tensors.push(Tensor::new(shape, data)?.with_requires_grad(true));
        }
        let params = ModelParams { names, tensors };
        if header.vocab.len() != header.config.vocab_size {
            return Err(ModelError::Checkpoint("vocabulary size does not match the config".into()));
        }
        let model = Model::from_params(header.config, params)?;
        let n_mom = r.u32()? as usize;
        let optimizer = match n_mom {
            0 => None,
            n if n == 2 * count => {
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for i in 0..n {
                    let (name, _, data) = r.tensor()?;
                    let p = i % count;
                    let want = format!("{}/{}", if i < count { "m" } else { "v" }, model.params.names[p]);
                    if name != want || data.len() != model.params.tensors[p].numel() {
                        return Err(ModelError::Checkpoint(format!("unexpected moment tensor {name}")));
                    }
                    if i < count { m.push(data) } else { v.push(data) }
                }
                Some(OptimizerState { m, v })
            }
            n => return Err(ModelError::Checkpoint(format!("{n} moment tensors for {count} parameters"))),
        };
        if r.at != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { model, vocab: Vocabulary::from_tokens(header.vocab), meta: header.meta, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &s in shape {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(ModelError::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let nlen = self.u32()? as usize;
        let name = String::from_utf8(self.take(nlen)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        if rank > 4 {
            return Err(ModelError::Checkpoint(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &s| a.checked_mul(s));
        let n = n.filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.at));
        let Some(n) = n else {
            return Err(ModelError::Checkpoint(format!("{name}: truncated payload")));
        };
        let data = self.take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, shape, data))
    }
}
