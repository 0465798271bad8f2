//! Self-describing binary container for named `f64` tensors.
//!
//! Used for dynamics weights, start-state mixtures, scalers, the clinician
//! network and learned policies. Layout (all integers little-endian):
//!
//! ```text
//! offset  size   field
//! 0       8      magic  b"ADSIMTC\0"
//! 8       4      u32 format version (currently 1)
//! 12      4      u32 header length H
//! 16      H      UTF-8 JSON header: {"kind", "byte_order": "little",
//!                "schema_fingerprint", "meta"}
//! 16+H    4      u32 tensor count N
//! then N records, sorted by name:
//!         2      u16 name length L
//!         L      UTF-8 name
//!         1      u8 rank R
//!         8*R    u64 dims
//!         8*P    f64 values, row-major, P = product of dims
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ADSIMTC\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension {
                context: "tensor data",
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    byte_order: String,
    schema_fingerprint: String,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub schema_fingerprint: String,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl TensorFile {
    pub fn new(kind: impl Into<String>, schema_fingerprint: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            schema_fingerprint: schema_fingerprint.into(),
            meta: serde_json::Value::Null,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| {
            Error::InvalidInput(format!("{} container has no tensor {name:?}", self.kind))
        })
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::InvalidInput(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(&t.data)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidInput(format!(
                "expected a {kind:?} container, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn expect_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if self.schema_fingerprint != fingerprint {
            return Err(Error::Schema(format!(
                "container was built for schema {}, loaded schema is {fingerprint}",
                self.schema_fingerprint
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            byte_order: "little".into(),
            schema_fingerprint: self.schema_fingerprint.clone(),
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(header.len())
                .expect("header fits u32")
                .to_le_bytes(),
        );
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name = name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidInput("tensor name longer than 65535 bytes".into()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(u8::try_from(t.shape.len()).expect("rank fits u8"));
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.err(&format!("unsupported format version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        if header.byte_order != "little" {
            return Err(r.err("only little-endian containers are supported"));
        }
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| r.err("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| r.err("dimension overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.err("tensor size overflow"))?;
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| r.err("tensor size overflow"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.insert(name, Tensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after last tensor"));
        }
        Ok(Self {
            kind: header.kind,
            schema_fingerprint: header.schema_fingerprint,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Malformed { message, .. } => Error::Malformed {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err("unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn err(&self, message: &str) -> Error {
        Error::Malformed {
            path: "<bytes>".into(),
            message: format!("{message} (offset {})", self.pos),
        }
    }
}
