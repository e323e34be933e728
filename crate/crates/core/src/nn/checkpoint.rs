//! Parameter files: `<stem>.bin` holds shape-prefixed little-endian `f64`
//! arrays, `<stem>.json` lists tensor names, shapes and byte offsets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NGPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub binary: String,
    pub tensors: Vec<ManifestEntry>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Encodes `store`; returns the bytes and the manifest entries.
pub fn encode(store: &ParamStore) -> (Vec<u8>, Vec<ManifestEntry>) {
    let mut buf = Vec::with_capacity(16 + store.num_scalars() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut entries = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: buf.len() as u64,
        });
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    (buf, entries)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Config(format!("checkpoint truncated at byte {}", self.pos))
        })?;
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
}

/// Decodes a binary blob against its manifest.
pub fn decode(bytes: &[u8], entries: &[ManifestEntry]) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Config("not a parameter checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Config(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    if count != entries.len() {
        return Err(Error::Config(format!("manifest lists {} tensors, file has {count}", entries.len())));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for e in entries {
        if r.pos as u64 != e.offset {
            return Err(Error::Config(format!("tensor {} expected at offset {}, found {}", e.name, e.offset, r.pos)));
        }
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        if shape != e.shape {
            return Err(Error::Config(format!("tensor {} has shape {shape:?}, manifest says {:?}", e.name, e.shape)));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        names.push(e.name.clone());
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Config("trailing bytes after last tensor".into()));
    }
    Ok(ParamStore::from_parts(names, tensors))
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_checkpoint(store: &ParamStore, stem: &Path) -> Result<()> {
    let (bin, json) = paths(stem);
    let (bytes, tensors) = encode(store);
    let manifest = CheckpointManifest {
        format: "nanogrid-params".into(),
        version: VERSION,
        binary: bin.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        tensors,
    };
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<ParamStore> {
    let (bin, json) = paths(stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    decode(&bytes, &manifest.tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> ParamStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add("l1.w", Tensor::glorot(5, 7, &mut rng));
        s.add("l1.b", Tensor::new(vec![7], vec![f64::MIN_POSITIVE, -0.0, 1e300, -1e-300, 0.1, 0.2, 0.3]).unwrap());
        s.add("seq", Tensor::zeros(&[2, 3, 4]));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("agent_0");
        let s = sample();
        save_checkpoint(&s, &stem).unwrap();
        let back = load_checkpoint(&stem).unwrap();
        assert_eq!(s.len(), back.len());
        for ((n1, a), (n2, b)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let s = sample();
        let (bytes, entries) = encode(&s);
        assert!(decode(&bytes[..bytes.len() - 1], &entries).is_err());
        let mut bad = entries.clone();
        bad[0].shape = vec![7, 5];
        assert!(decode(&bytes, &bad).is_err());
        assert!(decode(b"XXXX", &entries).is_err());
    }
}
