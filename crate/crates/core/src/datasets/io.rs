use std::path::Path;

use super::{DatasetMeta, Episode, OfflineDataset};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 9] = b"RWMU-DS-1";

/// Calls `f` on every payload value of an episode in file order:
/// observations, actions, rewards, dones, failures.
pub(crate) fn for_each_payload_value(e: &Episode, mut f: impl FnMut(f64)) {
    e.observations().iter().for_each(|&v| f(v));
    e.actions().iter().for_each(|&v| f(v));
    e.rewards.iter().for_each(|&v| f(v));
    e.dones.iter().for_each(|&d| f(if d { 1.0 } else { 0.0 }));
    e.failures.iter().for_each(|&d| f(if d { 1.0 } else { 0.0 }));
}

/// Layout: magic, `u32` obs dim, `u32` act dim, `u64` episode count,
/// `u64` metadata length, metadata JSON, one `u64` transition count per
/// episode, then the `f64` payload. All little-endian.
pub fn to_bytes(ds: &OfflineDataset) -> Vec<u8> {
    let meta = serde_json::to_vec(&ds.meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(ds.obs_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.act_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.episodes().len() as u64).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for e in ds.episodes() {
        out.extend_from_slice(&(e.len() as u64).to_le_bytes());
    }
    for e in ds.episodes() {
        for_each_payload_value(e, |v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated dataset at byte {}", self.pos)))?;
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("payload size overflows".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn flags(&mut self, n: usize) -> Result<Vec<bool>> {
        self.f64s(n)?
            .into_iter()
            .map(|v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(Error::Format(format!("flag value {v} is not 0 or 1"))),
            })
            .collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<OfflineDataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(DATASET_MAGIC.len()).ok() != Some(&DATASET_MAGIC[..]) {
        return Err(Error::Format("not an RWMU-DS-1 dataset".into()));
    }
    let od = c.u32()? as usize;
    let ad = c.u32()? as usize;
    let n_ep = c.u64()? as usize;
    let meta_len = c.u64()? as usize;
    let meta: DatasetMeta =
        serde_json::from_slice(c.take(meta_len)?).map_err(|e| Error::Format(format!("dataset metadata: {e}")))?;
    // each episode needs at least its length word
    if n_ep > bytes.len() / 8 {
        return Err(Error::Format(format!("episode count {n_ep} exceeds file size")));
    }
    let lens = (0..n_ep).map(|_| c.u64().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    let mut episodes = Vec::with_capacity(n_ep);
    for l in lens {
        let obs = c.f64s((l + 1) * od)?;
        let act = c.f64s(l * ad)?;
        let rewards = c.f64s(l)?;
        let dones = c.flags(l)?;
        let failures = c.flags(l)?;
        episodes.push(Episode::from_parts(od, ad, obs, act, rewards, dones, failures));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - c.pos)));
    }
    let declared = meta.hash.clone();
    let declared_count = meta.transitions;
    let ds = OfflineDataset::new(meta, od, ad, episodes)?;
    if ds.meta.hash != declared {
        return Err(Error::Format(format!("payload hash {} does not match declared {declared}", ds.meta.hash)));
    }
    if ds.transitions() != declared_count {
        return Err(Error::Format("declared transition count does not match payload".into()));
    }
    Ok(ds)
}

pub fn save(ds: &OfflineDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(ds)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<OfflineDataset> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(format!("dataset {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::window::tests::tagged;

    #[test]
    fn round_trip_and_truncation() {
        let ds = tagged(&[5, 9, 3]);
        let bytes = to_bytes(&ds);
        assert_eq!(from_bytes(&bytes).unwrap(), ds);
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
        }
    }

    #[test]
    fn tampered_payload_fails_hash_check() {
        let ds = tagged(&[5]);
        let mut bytes = to_bytes(&ds);
        let n = bytes.len();
        bytes[n - 60] ^= 0x01;
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }
}
