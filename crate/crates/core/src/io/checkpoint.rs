//! Named-tensor container.
//!
//! ```text
//! "SRFG" | u32 version | u64 manifest length | manifest (UTF-8 JSON) | payload
//! ```
//!
//! All integers and tensor elements are little-endian. Tensors are stored in
//! insertion order, back to back, as `f32`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::atomic_write;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"SRFG";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: [usize; 4],
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor<f32>)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.contains(&name) {
            return Err(corrupt(format!("duplicate tensor name {name}")));
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Names starting with `prefix`.
    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.names().any(|n| n.starts_with(prefix))
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let length = (t.len() * 4) as u64;
                let e = TensorEntry {
                    name: name.clone(),
                    dtype: "f32".into(),
                    shape: t.shape().dims(),
                    offset,
                    length,
                };
                offset += length;
                e
            })
            .collect();
        Manifest {
            version: FORMAT_VERSION,
            metadata: self.metadata.clone(),
            tensors,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        let mut buf = Vec::new();
        for (_, t) in &self.tensors {
            buf.clear();
            buf.reserve(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// Parses only the header and manifest.
    pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("file shorter than the header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic, not an SRFG checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let end = (HEADER_LEN as u64)
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| corrupt(format!("manifest length {mlen} exceeds the file")))? as usize;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[HEADER_LEN..end]).map_err(|e| corrupt(format!("manifest: {e}")))?;
        if manifest.version != version {
            return Err(corrupt(format!(
                "manifest version {} disagrees with header version {version}",
                manifest.version
            )));
        }
        Ok((manifest, end))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, start) = Self::read_manifest(bytes)?;
        let payload = &bytes[start..];
        let mut expected_offset = 0u64;
        let mut ckpt = Checkpoint {
            metadata: manifest.metadata,
            tensors: Vec::with_capacity(manifest.tensors.len()),
        };
        for e in manifest.tensors {
            if e.dtype != "f32" {
                return Err(corrupt(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let shape = Shape::from(e.shape);
            if e.length != shape.numel() as u64 * 4 {
                return Err(corrupt(format!(
                    "{}: length {} does not match shape {shape}",
                    e.name, e.length
                )));
            }
            if e.offset != expected_offset {
                return Err(corrupt(format!(
                    "{}: offset {} overlaps or leaves a gap (expected {expected_offset})",
                    e.name, e.offset
                )));
            }
            let end = e.offset + e.length;
            if end > payload.len() as u64 {
                return Err(corrupt(format!(
                    "{}: payload truncated ({} bytes available, {end} needed)",
                    e.name,
                    payload.len()
                )));
            }
            let data = payload[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|err| corrupt(format!("{}: {err}", e.name)))?;
            ckpt.insert(e.name, t)?;
            expected_offset = end;
        }
        if expected_offset != payload.len() as u64 {
            return Err(corrupt(format!(
                "payload has {} bytes but the manifest accounts for {expected_offset}",
                payload.len()
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| self.write_to(w).map_err(|e| Error::io(path, e)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.metadata.insert("iteration".into(), "12".into());
        c.insert(
            "a.weight",
            Tensor::from_fn([2, 3, 1, 1], |n, c, _, _| (n * 3 + c) as f32 - 2.5),
        )
        .unwrap();
        c.insert("b", Tensor::full([1, 1, 2, 2], f32::MIN_POSITIVE)).unwrap();
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }

    #[test]
    fn version_checked() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = sample();
        assert!(c.insert("b", Tensor::zeros([1, 1, 1, 1])).is_err());
    }
}
