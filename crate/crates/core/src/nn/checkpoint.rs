//! Self-describing parameter files.
//!
//! Layout: the 11-byte magic `RWMU-CKPT-1`, a little-endian `u64` length of
//! the JSON metadata block, the metadata itself (kind, seed, layer kinds,
//! tensor names and shapes, free-form extras), then every tensor's entries
//! as little-endian `f64` in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 11] = b"RWMU-CKPT-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub seed: u64,
    /// Human-readable layer kinds, e.g. `"gru:10->32"`.
    pub layers: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, layers: Vec<String>, named: Vec<(String, Tensor)>, extra: serde_json::Value) -> Self {
        let (entries, tensors) = named
            .into_iter()
            .map(|(name, t)| (TensorEntry { name, shape: t.shape().to_vec() }, t))
            .unzip();
        Self { meta: CheckpointMeta { kind: kind.to_string(), seed, layers, tensors: entries, extra }, tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("checkpoint metadata serializes");
        let payload: usize = self.tensors.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + meta.len() + payload * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let m = CHECKPOINT_MAGIC.len();
        if bytes.len() < m + 8 || &bytes[..m] != CHECKPOINT_MAGIC {
            return Err(fmt("bad magic"));
        }
        let meta_len = u64::from_le_bytes(bytes[m..m + 8].try_into().unwrap()) as usize;
        let body = m + 8;
        let meta_end = body.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt("truncated metadata"))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes[body..meta_end]).map_err(|e| fmt(&format!("metadata: {e}")))?;
        let need: usize = meta.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if bytes.len() - meta_end != need * 8 {
            return Err(fmt(&format!("payload has {} bytes, metadata declares {}", bytes.len() - meta_end, need * 8)));
        }
        let mut off = meta_end;
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for e in &meta.tensors {
            let n: usize = e.shape.iter().product();
            let data = bytes[off..off + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += n * 8;
            tensors.push(Tensor::new(e.shape.clone(), data).map_err(|err| fmt(&format!("tensor {}: {err}", e.name)))?);
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(format!("checkpoint {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.meta.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!("expected a {kind} checkpoint, found {}", self.meta.kind)))
        }
    }

    /// Pops tensors in declaration order.
    pub fn reader(&self) -> TensorReader<'_> {
        TensorReader { ckpt: self, next: 0 }
    }
}

pub struct TensorReader<'a> {
    ckpt: &'a Checkpoint,
    next: usize,
}

impl TensorReader<'_> {
    pub fn take(&mut self, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .ckpt
            .tensors
            .get(self.next)
            .ok_or_else(|| Error::Format("checkpoint has fewer tensors than the model".into()))?;
        if t.shape() != shape {
            return Err(Error::Format(format!(
                "tensor {} has shape {:?}, model expects {shape:?}",
                self.ckpt.meta.tensors[self.next].name,
                t.shape()
            )));
        }
        self.next += 1;
        Ok(t.clone())
    }

    pub fn finish(self) -> Result<()> {
        if self.next == self.ckpt.tensors.len() {
            Ok(())
        } else {
            Err(Error::Format("checkpoint has extra tensors".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(
            "test",
            7,
            vec!["linear:2->1".into()],
            vec![
                ("w".into(), Tensor::from_rows(&[vec![1.5], vec![-0.25]]).unwrap()),
                ("b".into(), Tensor::new(vec![1], vec![std::f64::consts::PI]).unwrap()),
            ],
            serde_json::json!({"note": "x"}),
        )
    }

    #[test]
    fn bytes_round_trip_and_size() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..11], b"RWMU-CKPT-1");
        let meta_len = u64::from_le_bytes(bytes[11..19].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 19 + meta_len + 3 * 8);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn reader_checks_shapes() {
        let c = sample();
        let mut r = c.reader();
        assert!(r.take(&[1, 2]).is_err());
        let mut r = c.reader();
        r.take(&[2, 1]).unwrap();
        r.take(&[1]).unwrap();
        r.finish().unwrap();
    }
}
