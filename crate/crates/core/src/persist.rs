//! JSON header plus raw little-endian `f64` blob, used to save fitted
//! reducers and trained detectors.
//!
//! `<stem>.json` holds free-form metadata and a tensor table
//! (`name`, `shape`, byte `offset`, element count `len`); `<stem>.bin` holds
//! the concatenated tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

pub const FORMAT: &str = "drtsad-tensors/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    blob: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorBundle {
    pub meta: serde_json::Value,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl TensorBundle {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(name.into(), (shape, data));
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &Matrix) {
        self.insert(name, vec![m.rows(), m.cols()], m.as_slice().to_vec());
    }

    pub fn insert_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.insert(name, vec![v.len()], v.to_vec());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.tensors
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Config(format!("tensor {name:?} missing from bundle")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let (shape, data) = self.get(name)?;
        match shape {
            [r, c] => Matrix::from_vec(*r, *c, data.to_vec()),
            _ => Err(Error::Config(format!("tensor {name:?} is not 2-D"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.1.to_vec())
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (name, (shape, data)) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: blob.len(),
                len: data.len(),
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let blob_name = format!("{stem}.bin");
        fs::write(dir.join(&blob_name), &blob)?;
        let header = Header {
            format: FORMAT.into(),
            blob: blob_name,
            meta: self.meta.clone(),
            tensors: entries,
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&header)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let header: Header = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        if header.format != FORMAT {
            return Err(Error::Config(format!("unknown bundle format {:?}", header.format)));
        }
        let blob = fs::read(dir.join(&header.blob))?;
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let end = e.offset + e.len * 8;
            if end > blob.len() || e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Config(format!("tensor {:?} inconsistent with blob", e.name)));
            }
            let data = blob[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.insert(e.name, (e.shape, data));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }
}
