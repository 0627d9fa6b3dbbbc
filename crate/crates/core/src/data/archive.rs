//! Self-describing tensor archive.
//!
//! ```text
//! offset 0   8 bytes   magic "PFJMTNSR"
//! offset 8   4 bytes   header length H, u32 little-endian
//! offset 12  H bytes   UTF-8 JSON {version, entries: [{name, dtype: "f32", shape}], metadata}
//! offset 12+H          payloads, f32 little-endian, row-major, in entry order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ArchiveError;

pub const MAGIC: &[u8; 8] = b"PFJMTNSR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { shape, data }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named tensors in insertion order plus a free-form JSON metadata block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, Tensor)>,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryHeader {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    entries: Vec<EntryHeader>,
    metadata: serde_json::Value,
}

impl Archive {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            metadata: serde_json::Value::Object(Default::default()),
        }
    }

    pub fn with_metadata(metadata: serde_json::Value) -> Self {
        Self {
            entries: Vec::new(),
            metadata,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), ArchiveError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(ArchiveError::DuplicateName(name));
        }
        check_tensor(&name, &tensor)?;
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, ArchiveError> {
        self.get(name).ok_or_else(|| ArchiveError::Missing(name.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_tensor(name: &str, tensor: &Tensor) -> Result<(), ArchiveError> {
    if tensor.numel() != tensor.data.len() {
        return Err(ArchiveError::ShapeData {
            name: name.to_string(),
            shape: tensor.shape.clone(),
            expected: tensor.numel(),
            actual: tensor.data.len(),
        });
    }
    if let Some(index) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(ArchiveError::NonFinite {
            name: name.to_string(),
            index,
        });
    }
    Ok(())
}

pub fn encode(archive: &Archive) -> Result<Vec<u8>, ArchiveError> {
    let header = Header {
        version: VERSION,
        entries: archive
            .entries
            .iter()
            .map(|(name, t)| EntryHeader {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape.clone(),
            })
            .collect(),
        metadata: archive.metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ArchiveError::Header(e.to_string()))?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| ArchiveError::Header(format!("header of {} bytes exceeds u32", json.len())))?;
    let payload: usize = archive.entries.iter().map(|(_, t)| t.data.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in &archive.entries {
        check_tensor(name, t)?;
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Archive, ArchiveError> {
    if bytes.len() < MAGIC.len() {
        return Err(ArchiveError::Truncated {
            what: "magic",
            needed: MAGIC.len(),
            available: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(ArchiveError::BadMagic {
            found: bytes[..8].to_vec(),
        });
    }
    if bytes.len() < 12 {
        return Err(ArchiveError::Truncated {
            what: "header length",
            needed: 4,
            available: bytes.len() - 8,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rest = &bytes[12..];
    if rest.len() < header_len {
        return Err(ArchiveError::Truncated {
            what: "header",
            needed: header_len,
            available: rest.len(),
        });
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| ArchiveError::Header(e.to_string()))?;
    if header.version != VERSION {
        return Err(ArchiveError::Header(format!("unsupported version {}", header.version)));
    }
    let payload = &rest[header_len..];
    let mut declared = 0usize;
    for e in &header.entries {
        if e.dtype != "f32" {
            return Err(ArchiveError::Dtype(e.dtype.clone()));
        }
        let numel = e
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ArchiveError::Header(format!("shape {:?} overflows", e.shape)))?;
        declared = declared
            .checked_add(numel)
            .ok_or_else(|| ArchiveError::Header("payload size overflows".into()))?;
    }
    if payload.len() < declared {
        return Err(ArchiveError::Truncated {
            what: "payload",
            needed: declared,
            available: payload.len(),
        });
    }
    if payload.len() != declared {
        return Err(ArchiveError::LengthMismatch {
            declared,
            actual: payload.len(),
        });
    }
    let mut archive = Archive::with_metadata(header.metadata);
    let mut cursor = 0;
    for e in header.entries {
        let numel: usize = e.shape.iter().product();
        let data = payload[cursor..cursor + 4 * numel]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += 4 * numel;
        archive.insert(e.name, Tensor::new(e.shape, data))?;
    }
    Ok(archive)
}

pub fn write_archive(path: impl AsRef<Path>, archive: &Archive) -> Result<(), ArchiveError> {
    let path = path.as_ref();
    let bytes = encode(archive)?;
    fs::write(path, bytes).map_err(|source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive, ArchiveError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
