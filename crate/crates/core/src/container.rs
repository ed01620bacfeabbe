//! Binary model files: magic, header length, JSON header, then little-endian
//! `f32` tensors in the order the header lists them.
//!
//! ```text
//! b"ECHOMDL1" | u32 LE header length | header JSON | tensor data
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ECHOMDL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    /// `rules`, `span`, `bow` or `cnn`.
    pub kind: String,
    pub ontology_version: u32,
    pub characteristic: String,
    /// Model-specific configuration, class list and training log.
    pub meta: Value,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub header: Header,
    pub tensors: Vec<Tensor>,
}

impl ModelFile {
    pub fn new(
        kind: &str,
        ontology_version: u32,
        characteristic: &str,
        meta: Value,
        tensors: Vec<Tensor>,
    ) -> Self {
        ModelFile {
            header: Header {
                format_version: FORMAT_VERSION,
                kind: kind.to_string(),
                ontology_version,
                characteristic: characteristic.to_string(),
                meta,
                tensors: tensors
                    .iter()
                    .map(|t| TensorInfo {
                        name: t.name.clone(),
                        shape: t.shape.clone(),
                    })
                    .collect(),
            },
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Model(format!("missing tensor `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Model(format!(
                "expected a `{kind}` model, found `{}`",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let n: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut out = Vec::with_capacity(12 + header.len() + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<ModelFile> {
        let header = read_header(&mut r)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            let n: usize = info.shape.iter().product();
            let mut bytes = vec![0u8; 4 * n];
            r.read_exact(&mut bytes)
                .map_err(|e| truncated(e, &info.name))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor {
                name: info.name.clone(),
                shape: info.shape.clone(),
                data,
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Model(format!(
                "{} trailing bytes after tensors",
                rest.len()
            )));
        }
        Ok(ModelFile { header, tensors })
    }
}

fn truncated(e: std::io::Error, what: &str) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Model(format!("file truncated while reading {what}"))
    } else {
        Error::Io(e)
    }
}

/// Reads only the magic and JSON header.
pub fn read_header<R: Read>(mut r: R) -> Result<Header> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| truncated(e, "magic"))?;
    if &magic != MAGIC {
        return Err(Error::Model("not an echolab model file (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|e| truncated(e, "header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|e| truncated(e, "header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Model(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelFile {
        ModelFile::new(
            "span",
            1,
            "aortic_stenosis",
            serde_json::json!({"classes": ["NoLabel", "Mild"]}),
            vec![
                Tensor {
                    name: "a".into(),
                    shape: vec![2, 2],
                    data: vec![1.0, -2.5, f32::MIN_POSITIVE, 3.25],
                },
                Tensor {
                    name: "b".into(),
                    shape: vec![0],
                    data: vec![],
                },
            ],
        )
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = ModelFile::read(&bytes[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(ModelFile::read(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelFile::read(&extra[..]).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(ModelFile::read(&bad[..]), Err(Error::Model(_))));
    }
}
