//! Flat key-to-array binary container for checkpoints and cached datasets.
//!
//! Layout:
//!
//! ```text
//! b"VERACKPT"              8 bytes
//! version                  u32 little-endian (currently 1)
//! header_len               u64 little-endian
//! header                   header_len bytes of UTF-8 JSON
//! payload                  f64 little-endian values
//! ```
//!
//! The header is `{"meta": {...}, "arrays": [{"name", "shape": [r, c],
//! "offset"}]}` where `offset` is the byte offset of the array inside the
//! payload. Arrays are stored row-major, in name order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffcore::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"VERACKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub arrays: ParamSet,
}

impl Container {
    pub fn new(meta: Value, arrays: ParamSet) -> Self {
        Self { meta, arrays }
    }

    /// The `meta.kind` string, if present.
    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind").and_then(Value::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0u64;
        for (name, t) in self.arrays.iter() {
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: t.shape(),
                offset,
            });
            offset += 8 * t.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            arrays: entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.arrays.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        let mut arrays = ParamSet::new();
        for e in header.arrays {
            let n = e.shape[0] * e.shape[1];
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > payload.len() {
                return Err(Error::Format(format!("array `{}` runs past the payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(e.name, Tensor::new(e.shape[0], e.shape[1], data)?);
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_preserves_bits() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::new(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        a.insert("b", Tensor::zeros(1, 0));
        let c = Container::new(json!({"kind": "test", "n": 3}), a);
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.kind(), Some("test"));
        let (x, y) = (c.arrays.get("w").unwrap(), back.arrays.get("w").unwrap());
        for (p, q) in x.data().iter().zip(y.data()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
        assert_eq!(back.arrays.get("b").unwrap().shape(), [1, 0]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"not a checkpoint at all").is_err());
        let mut bytes = Container::new(json!({}), ParamSet::new()).to_bytes().unwrap();
        bytes[8] = 9;
        assert!(Container::from_bytes(&bytes).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut a = ParamSet::new();
        a.insert("x", Tensor::row_vector(&[1.0, 2.0]));
        Container::new(json!({"kind": "k"}), a.clone()).save(&path).unwrap();
        assert_eq!(Container::load(&path).unwrap().arrays, a);
    }
}
