//! Binary checkpoint format.
//!
//! ```text
//! "EMTCKPT1"
//! u64 LE length, JSON descriptor (format version, architecture, vocabulary, metadata)
//! u32 LE record count, then per record:
//!     u32 LE name length, name bytes (UTF-8)
//!     u32 LE rank, rank × u64 LE dims
//!     numel × f64 LE values
//! u32 LE CRC32 of every preceding byte
//! ```
//!
//! Parameter records come in model order. When optimizer state is present it
//! follows as `adam.m/<name>` then `adam.v/<name>` records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelKind, Network};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::training::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMTCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_hash: String,
    pub epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    format_version: u32,
    architecture: Architecture,
    vocabulary: Option<Vocabulary>,
    meta: CheckpointMeta,
    optimizer_steps: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub vocabulary: Option<Vocabulary>,
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_network(
        net: &Network,
        vocabulary: Option<Vocabulary>,
        meta: CheckpointMeta,
        optimizer: Option<AdamState>,
    ) -> Self {
        Self {
            architecture: net.architecture().clone(),
            vocabulary,
            meta,
            params: net.params().iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            optimizer,
        }
    }

    /// Rebuilds the network, checking every name and shape against the
    /// layout its architecture implies.
    pub fn restore(&self, expected: Option<ModelKind>) -> Result<Network> {
        if let Some(kind) = expected {
            if kind != self.architecture.kind {
                return Err(Error::ArchitectureMismatch(format!(
                    "checkpoint holds a {:?} network, expected {kind:?}",
                    self.architecture.kind
                )));
            }
        }
        let mut net = Network::new(self.architecture.clone(), 0)?;
        if net.params().len() != self.params.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "{} stored parameters, architecture defines {}",
                self.params.len(),
                net.params().len()
            )));
        }
        let ids: Vec<_> = net.params().ids().collect();
        for (id, (name, value)) in ids.into_iter().zip(&self.params) {
            let p = net.params().get(id);
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(Error::ArchitectureMismatch(format!(
                    "stored `{name}` {:?} does not match `{}` {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            net.params_mut().set_value(id, value.clone())?;
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let descriptor = Descriptor {
            format_version: FORMAT_VERSION,
            architecture: self.architecture.clone(),
            vocabulary: self.vocabulary.clone(),
            meta: self.meta.clone(),
            optimizer_steps: self.optimizer.as_ref().map(|o| o.steps.clone()),
        };
        let json = serde_json::to_vec(&descriptor)?;
        let mut records: Vec<(String, &Tensor)> = self.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("adam.m/", &opt.m), ("adam.v/", &opt.v)] {
                records.extend(self.params.iter().zip(moments).map(|((n, _), t)| (format!("{prefix}{n}"), t)));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing EMTCKPT1 magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC32 mismatch (truncated or modified file)"));
        }
        let mut r = Reader { bytes: &body[8..] };
        let json_len = r.u64()? as usize;
        let descriptor: Descriptor = serde_json::from_slice(r.take(json_len)?)?;
        if descriptor.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: descriptor.format_version, expected: FORMAT_VERSION });
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("record name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| corrupt("record too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            records.push((name, Tensor::new(shape, data)?));
        }
        if !r.bytes.is_empty() {
            return Err(corrupt("trailing bytes after records"));
        }

        let optimizer = match descriptor.optimizer_steps {
            None => None,
            Some(steps) => {
                let n = steps.len();
                if records.len() != 3 * n {
                    return Err(corrupt("optimizer record count does not match parameters"));
                }
                let v: Vec<Tensor> = records.drain(2 * n..).map(|(_, t)| t).collect();
                let m: Vec<Tensor> = records.drain(n..).map(|(_, t)| t).collect();
                Some(AdamState { m, v, steps })
            }
        };
        Ok(Self {
            architecture: descriptor.architecture,
            vocabulary: descriptor.vocabulary,
            meta: descriptor.meta,
            params: records,
            optimizer,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::CorruptCheckpoint("unexpected end of data".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
