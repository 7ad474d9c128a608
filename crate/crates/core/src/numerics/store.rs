//! Flat little-endian `f64` tensor files with a JSON shape manifest.
//!
//! A store on disk is a pair: `<stem>.json` lists every tensor's name, shape
//! and offset (in elements) into `<stem>.bin`, which is the plain
//! concatenation of the tensors as 64-bit little-endian floats. The manifest
//! also carries free-form JSON metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// In-memory set of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorStore {
    entries: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub meta: serde_json::Value,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!("tensor {name}"), n, data.len()));
        }
        if self.entries.iter().any(|(k, _, _)| *k == name) {
            return Err(Error::Contract(format!("duplicate tensor name {name}")));
        }
        self.entries.push((name, shape, data));
        Ok(())
    }

    /// Adds every tensor of `params` under `prefix.`.
    pub fn insert_params<P: Params + ?Sized>(&mut self, prefix: &str, params: &P) -> Result<()> {
        for ((name, shape), t) in params.tensor_specs().into_iter().zip(params.tensors()) {
            self.insert(format!("{prefix}.{name}"), shape, t.to_vec())?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Fetches a tensor and checks its shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let (s, d) = self.get(name)?;
        if s != shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: stored {s:?}, expected {shape:?}"
            )));
        }
        Ok(d)
    }

    /// Overwrites `params` from tensors stored under `prefix.`, refusing on any shape difference.
    pub fn load_params<P: Params + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let specs = params.tensor_specs();
        let mut sources = Vec::with_capacity(specs.len());
        for (name, shape) in &specs {
            sources.push(self.get_shaped(&format!("{prefix}.{name}"), shape)?);
        }
        for (dst, src) in params.tensors_mut().into_iter().zip(sources) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let tensors = self
            .entries
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += data.len();
                e
            })
            .collect();
        Manifest {
            format_version: STORE_FORMAT_VERSION,
            tensors,
            meta: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.entries.iter().map(|(_, _, d)| d.len()).sum();
        let mut out = Vec::with_capacity(total * 8);
        for (_, _, d) in &self.entries {
            for x in d {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.bin` inside `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_vec_pretty(&self.manifest())?;
        fs::write(dir.join(format!("{stem}.json")), manifest)?;
        fs::write(dir.join(format!("{stem}.bin")), self.to_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {STORE_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint("tensor data length is not a multiple of 8".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut store = TensorStore {
            entries: Vec::with_capacity(manifest.tensors.len()),
            meta: manifest.meta,
        };
        let mut expected_offset = 0;
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + n > values.len() {
                return Err(Error::Checkpoint(format!("tensor {} lies outside the data file", e.name)));
            }
            store.insert(e.name, e.shape, values[e.offset..e.offset + n].to_vec())?;
            expected_offset += n;
        }
        if expected_offset != values.len() {
            return Err(Error::Checkpoint("trailing data after last tensor".into()));
        }
        Ok(store)
    }
}
