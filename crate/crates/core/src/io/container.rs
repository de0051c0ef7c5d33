//! Versioned self-describing container shared by model files and
//! accumulator checkpoints.
//!
//! Layout:
//!
//! ```text
//! TGPC <version>\n
//! <one-line JSON header>\n
//! <binary payload: arrays back to back, little-endian>
//! ```
//!
//! The header carries the container kind, a string-keyed metadata map, the
//! array table (name, dtype, shape, byte offset) and a SHA-256 of the payload.
//! Keys are emitted sorted, so encoding is byte-deterministic.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &str = "TGPC";
pub const FORMAT_VERSION: u64 = 1;

/// A dense array stored column-major as raw little-endian bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    dtype: String,
    rows: usize,
    cols: usize,
    bytes: Vec<u8>,
}

impl Array {
    pub fn from_slice<T: Real>(data: &[T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        let mut bytes = Vec::with_capacity(data.len() * T::BYTES);
        for v in data {
            v.write_le(&mut bytes);
        }
        Self {
            dtype: T::DTYPE.to_string(),
            rows,
            cols,
            bytes,
        }
    }

    pub fn from_matrix<T: Real>(m: &DMatrix<T>) -> Self {
        Self::from_slice(m.as_slice(), m.nrows(), m.ncols())
    }

    pub fn from_vector<T: Real>(v: &DVector<T>) -> Self {
        Self::from_slice(v.as_slice(), v.len(), 1)
    }

    pub fn dtype(&self) -> &str {
        &self.dtype
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Decodes into `T`, converting between `f32` and `f64` when needed.
    pub fn to_vec<T: Real>(&self) -> Result<Vec<T>> {
        let n = self.rows * self.cols;
        let out = match self.dtype.as_str() {
            "f64" => self.bytes.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect::<Vec<_>>(),
            "f32" => self
                .bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::read_le(c) as f64))
                .collect(),
            other => return Err(Error::Format(format!("unknown dtype '{other}'"))),
        };
        if out.len() != n {
            return Err(Error::Format("array payload does not match its shape".into()));
        }
        Ok(out)
    }

    pub fn to_matrix<T: Real>(&self) -> Result<DMatrix<T>> {
        Ok(DMatrix::from_vec(self.rows, self.cols, self.to_vec()?))
    }

    pub fn to_dvector<T: Real>(&self) -> Result<DVector<T>> {
        if self.cols != 1 {
            return Err(Error::Format(format!("expected a column vector, found {} columns", self.cols)));
        }
        Ok(DVector::from_vec(self.to_vec()?))
    }
}

/// In-memory form of a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    kind: String,
    meta: Map<String, Value>,
    arrays: Vec<(String, Array)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            meta: Map::new(),
            arrays: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a '{kind}' file, found '{}'", self.kind)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&Value> {
        self.meta.get(key).filter(|v| !v.is_null())
    }

    fn require(&self, key: &str) -> Result<&Value> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("missing header field '{key}'")))
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.require(key)?
            .as_str()
            .ok_or_else(|| Error::Format(format!("header field '{key}' is not a string")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.require(key)?
            .as_u64()
            .ok_or_else(|| Error::Format(format!("header field '{key}' is not an unsigned integer")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.require(key)?
            .as_f64()
            .ok_or_else(|| Error::Format(format!("header field '{key}' is not a number")))
    }

    pub fn get_opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.meta(key) {
            None => Ok(None),
            Some(_) => self.get_f64(key).map(Some),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let bad = || Error::Format(format!("header field '{key}' is not a list of numbers"));
        self.require(key)?
            .as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|v| v.as_f64().ok_or_else(bad))
            .collect()
    }

    /// Appends an array, replacing any earlier one with the same name.
    pub fn push_array(&mut self, name: impl Into<String>, array: Array) {
        let name = name.into();
        self.arrays.retain(|(n, _)| *n != name);
        self.arrays.push((name, array));
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn require_array(&self, name: &str) -> Result<&Array> {
        self.array(name)
            .ok_or_else(|| Error::Format(format!("missing array '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut table = Vec::with_capacity(self.arrays.len());
        for (name, a) in &self.arrays {
            table.push(json!({
                "name": name,
                "dtype": a.dtype,
                "rows": a.rows,
                "cols": a.cols,
                "offset": payload.len(),
                "bytes": a.bytes.len(),
            }));
            payload.extend_from_slice(&a.bytes);
        }
        let header = json!({
            "kind": self.kind,
            "meta": Value::Object(self.meta.clone()),
            "arrays": table,
            "payload_sha256": hex::encode(Sha256::digest(&payload)),
        });
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n").into_bytes();
        out.extend_from_slice(header.to_string().as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        let nl1 = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt("not a container file"))?;
        let first = std::str::from_utf8(&bytes[..nl1]).map_err(|_| fmt("not a container file"))?;
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| fmt("not a container file (bad magic)"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let rest = &bytes[nl1 + 1..];
        let nl2 = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt("truncated container header"))?;
        let header: Value =
            serde_json::from_slice(&rest[..nl2]).map_err(|e| Error::Format(format!("bad container header: {e}")))?;
        let payload = &rest[nl2 + 1..];
        let digest = header["payload_sha256"].as_str().ok_or_else(|| fmt("missing payload checksum"))?;
        if hex::encode(Sha256::digest(payload)) != digest {
            return Err(fmt("payload checksum mismatch (file is corrupt)"));
        }
        let kind = header["kind"].as_str().ok_or_else(|| fmt("missing container kind"))?;
        let meta = header["meta"].as_object().cloned().ok_or_else(|| fmt("missing metadata"))?;
        let mut arrays = Vec::new();
        for entry in header["arrays"].as_array().ok_or_else(|| fmt("missing array table"))? {
            let field = |k: &str| {
                entry[k]
                    .as_u64()
                    .map(|v| v as usize)
                    .ok_or_else(|| Error::Format(format!("array entry lacks '{k}'")))
            };
            let name = entry["name"].as_str().ok_or_else(|| fmt("array entry lacks a name"))?;
            let dtype = entry["dtype"].as_str().ok_or_else(|| fmt("array entry lacks a dtype"))?;
            let (offset, len) = (field("offset")?, field("bytes")?);
            let end = offset.checked_add(len).filter(|&e| e <= payload.len()).ok_or_else(|| fmt("array out of bounds"))?;
            arrays.push((
                name.to_string(),
                Array {
                    dtype: dtype.to_string(),
                    rows: field("rows")?,
                    cols: field("cols")?,
                    bytes: payload[offset..end].to_vec(),
                },
            ));
        }
        Ok(Self {
            kind: kind.to_string(),
            meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io_at(path))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::io_at(path))?)
    }
}
