//! Tensor container file.
//!
//! Layout: the 8 magic bytes `TSCAMTEN`, a little-endian `u32` header
//! length, a JSON header mapping tensor names to
//! `{dtype, shape, offset, byte_length}` (offsets relative to the payload),
//! then the raw little-endian payload. The header also carries the reserved
//! keys `__version__`, `config` (model configuration) and `__meta__`
//! (free-form JSON).

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{DType, Real, Tensor};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"TSCAMTEN";
pub const CONTAINER_VERSION: u64 = 1;

const VERSION_KEY: &str = "__version__";
const CONFIG_KEY: &str = "config";
const META_KEY: &str = "__meta__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub byte_length: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    tensors: IndexMap<String, (DType, Vec<usize>, Vec<u8>)>,
    pub config: Option<Value>,
    pub meta: Map<String, Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        self.tensors
            .insert(name.into(), (T::DTYPE, t.shape().to_vec(), bytes));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn dtype(&self, name: &str) -> Option<DType> {
        self.tensors.get(name).map(|(d, _, _)| *d)
    }

    /// Decodes a tensor, converting to `T` if the stored dtype differs.
    pub fn get<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let (dtype, shape, bytes) = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("container has no tensor `{name}`")))?;
        let data: Vec<T> = match dtype {
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        Tensor::new(shape.clone(), data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        header.insert(VERSION_KEY.into(), Value::from(CONTAINER_VERSION));
        if let Some(cfg) = &self.config {
            header.insert(CONFIG_KEY.into(), cfg.clone());
        }
        if !self.meta.is_empty() {
            header.insert(META_KEY.into(), Value::Object(self.meta.clone()));
        }
        let mut offset = 0;
        for (name, (dtype, shape, bytes)) in &self.tensors {
            let entry = Entry {
                dtype: *dtype,
                shape: shape.clone(),
                offset,
                byte_length: bytes.len(),
            };
            header.insert(name.clone(), serde_json::to_value(entry).unwrap());
            offset += bytes.len();
        }
        let header = serde_json::to_vec(&Value::Object(header)).unwrap();
        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, bytes) in self.tensors.values() {
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CONTAINER_MAGIC {
            return Err(Error::Format("missing TSCAMTEN magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload_start = 12usize
            .checked_add(hlen)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Map<String, Value> = serde_json::from_slice(&bytes[12..payload_start])
            .map_err(|e| Error::Format(format!("header is not a JSON object: {e}")))?;
        let payload = &bytes[payload_start..];

        let mut out = Container::new();
        match header.get(VERSION_KEY).and_then(Value::as_u64) {
            Some(CONTAINER_VERSION) => {}
            other => {
                return Err(Error::Format(format!(
                    "unsupported container version {other:?}"
                )))
            }
        }
        // Offsets must be laid out in order for the container to round-trip.
        let mut entries: Vec<(String, Entry)> = Vec::new();
        for (key, value) in header {
            match key.as_str() {
                VERSION_KEY => {}
                CONFIG_KEY => out.config = Some(value),
                META_KEY => match value {
                    Value::Object(m) => out.meta = m,
                    _ => return Err(Error::Format("__meta__ must be an object".into())),
                },
                _ => {
                    let entry: Entry = serde_json::from_value(value)
                        .map_err(|e| Error::Format(format!("entry `{key}`: {e}")))?;
                    entries.push((key, entry));
                }
            }
        }
        entries.sort_by_key(|(_, e)| e.offset);
        for (name, e) in entries {
            let n: usize = e.shape.iter().product();
            if n == 0 || n * e.dtype.size() != e.byte_length {
                return Err(Error::Format(format!(
                    "entry `{name}`: byte_length {} does not match shape {:?}",
                    e.byte_length, e.shape
                )));
            }
            let end = e
                .offset
                .checked_add(e.byte_length)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| Error::Format(format!("entry `{name}` runs past end of file")))?;
            out.tensors
                .insert(name, (e.dtype, e.shape, payload[e.offset..end].to_vec()));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
