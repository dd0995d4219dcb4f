//! Named parameter storage, seeded initialization, and checkpoint files.
//!
//! A checkpoint is one line of JSON (format tag, version, network config,
//! and the `path → shape` table) terminated by `\n`, followed by the
//! little-endian `f32` payloads of every tensor in lexicographic path order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::model::trace;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "asnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters keyed by path; iteration is lexicographic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total element count.
    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Errors unless names and shapes match exactly what `cfg` declares.
    pub fn check_against(&self, cfg: &NetConfig) -> Result<()> {
        let expected = trace(cfg).params;
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => {
                    return Err(Error::Validation(format!(
                        "checkpoint lacks parameter {name}"
                    )))
                }
                Some(t) if &t.shape != shape => {
                    return Err(Error::Validation(format!(
                        "parameter {name} has shape {:?}, config expects {shape:?}",
                        t.shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Validation(format!(
                "parameter {extra} is not part of the config"
            )));
        }
        Ok(())
    }
}

/// Seeded initialization: weights uniform in `±√(6 / fan_in)`, biases zero,
/// GC value transforms zero (so every GC block starts as the identity).
pub fn init_params<T: Scalar>(cfg: &NetConfig) -> ParamStore<T> {
    let shapes = trace(cfg).params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::default();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".bias") || name.ends_with(".wv") {
            vec![T::zero(); n]
        } else {
            // weight [Co, Ci, kh, kw], transposed [Ci, Co, kh, kw], key [1, C, 1, 1]
            let fan_in = if name.ends_with(".wk") {
                shape[1]
            } else if is_transposed(&name) {
                shape[0] * shape[2] * shape[3]
            } else {
                shape[1] * shape[2] * shape[3]
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| T::of(rng.gen_range(-bound..bound)))
                .collect()
        };
        store.insert(&name, Tensor::from_vec(&shape, data));
    }
    store
}

fn is_transposed(name: &str) -> bool {
    name.starts_with("bpr.dec")
}

pub fn count_params(cfg: &NetConfig) -> usize {
    trace(cfg)
        .params
        .values()
        .map(|s| s.iter().product::<usize>())
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    path: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    config: NetConfig,
    params: Vec<ParamEntry>,
}

pub fn save_checkpoint(path: &Path, cfg: &NetConfig, params: &ParamStore<f32>) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        params: params
            .iter()
            .map(|(k, v)| ParamEntry {
                path: k.clone(),
                shape: v.shape.clone(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(params.n_values() * 4);
    for (_, t) in params.iter() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetConfig, ParamStore<f32>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::format(path, format!("bad checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            ),
        ));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let expected: usize = header
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>() * 4)
        .sum();
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let mut store = ParamStore::default();
    let mut chunks = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut last: Option<&str> = None;
    for entry in &header.params {
        if last.is_some_and(|l| l >= entry.path.as_str()) {
            return Err(Error::format(
                path,
                "parameter table is not in lexicographic order",
            ));
        }
        last = Some(&entry.path);
        let n = entry.shape.iter().product();
        let data: Vec<f32> = chunks.by_ref().take(n).collect();
        store.insert(&entry.path, Tensor::from_vec(&entry.shape, data));
    }
    store.check_against(&header.config)?;
    Ok((header.config, store))
}
