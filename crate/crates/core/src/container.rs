//! Binary array container shared by checkpoints and feature files.
//!
//! Layout: 8-byte magic `SMBGBIN1`, a little-endian `u64` header length, a UTF-8 JSON header
//! `{"meta": ..., "arrays": [{"name", "shape"}, ...]}`, then every array's values as
//! little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SMBGBIN1";

#[derive(Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayHeader>,
}

#[derive(Serialize, Deserialize)]
struct JsonArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonContainer {
    meta: Value,
    arrays: Vec<JsonArray>,
}

/// Named arrays plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, t)| ArrayHeader {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let values: usize = self.arrays.iter().map(|(_, t)| t.numel()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + values * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::parse(path, msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not an SMBGBIN1 container"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
        let mut offset = 16 + hlen;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in header.arrays {
            let n: usize = a.shape.iter().product();
            let raw = bytes
                .get(offset..offset + n * 8)
                .ok_or_else(|| bad(&format!("truncated data for array {}", a.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += n * 8;
            let t = Tensor::new(a.shape, data).map_err(|e| bad(&e.to_string()))?;
            arrays.push((a.name, t));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after last array"));
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn to_json(&self) -> String {
        let c = JsonContainer {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, t)| JsonArray {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&c).expect("container serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let c: JsonContainer = serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        let arrays = c
            .arrays
            .into_iter()
            .map(|a| {
                Tensor::new(a.shape, a.data)
                    .map(|t| (a.name, t))
                    .map_err(|e| Error::parse(path, e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { meta: c.meta, arrays })
    }

    /// Writes JSON when the extension is `.json`, the binary form otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if is_json(path) {
            self.to_json().into_bytes()
        } else {
            self.encode()
        };
        write_file(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(MAGIC) {
            Self::decode(&bytes, path)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::parse(path, "neither a binary container nor UTF-8 JSON"))?;
            Self::from_json(&text, path)
        }
    }
}

/// Writes `bytes`, creating missing parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
