//! Sectioned binary container used for checkpoints and feature files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "MTWNCKPT"
//! version      u32       1
//! header_len   u32
//! header       JSON      (config echo, run id, metadata)
//! n_records    u32
//! record*      name_len u32, name utf-8, ndim u32, dims u64 × ndim,
//!              payload f64 × product(dims)
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MTWNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Value,
    pub arrays: IndexMap<String, Tensor>,
}

impl Container {
    pub fn new(header: Value) -> Self {
        Self {
            header,
            arrays: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::format("records", format!("missing array {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).unwrap_or_default();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::format("magic", "not a model/feature container"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(
                "version",
                format!("unsupported container version {version}"),
            ));
        }
        let hlen = r.u32("header length")? as usize;
        let header: Value =
            serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| Error::format("header", e.to_string()))?;
        let n = r.u32("record count")?;
        let mut arrays = IndexMap::new();
        for _ in 0..n {
            let nlen = r.u32("record name length")? as usize;
            let name = std::str::from_utf8(r.take(nlen, "record name")?)
                .map_err(|_| Error::format("record name", "not utf-8"))?
                .to_string();
            let ndim = r.u32("record rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64("record dims")? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(
                numel
                    .checked_mul(8)
                    .ok_or_else(|| Error::format("record dims", "overflow"))?,
                "record payload",
            )?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap_or([0; 8])))
                .collect();
            arrays.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { header, arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(field, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
