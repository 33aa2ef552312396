//! Named weight tensors and the `BLZW` binary container.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic   "BLZW"
//! u32     version (= 1)
//! u32     tensor count
//! per tensor:
//!   u32   name length, then that many ASCII bytes
//!   u32   rank, then rank x u32 dims
//!   f32   x product(dims)
//! ```
//!
//! Tensors of rank below 4 are left-padded with unit dims on load; the writer
//! always emits rank 4.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::net::{LayerSpec, NetworkSpec};
use crate::ops::ConvKind;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"BLZW";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic at byte 0: expected \"BLZW\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {version} at byte {offset}")]
    UnsupportedVersion { offset: usize, version: u32 },
    #[error("file truncated at byte {offset}: needed {expected} bytes for {what}, {actual} available")]
    Truncated {
        offset: usize,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("tensor name at byte {offset} is not printable ASCII")]
    InvalidName { offset: usize },
    #[error("duplicate tensor name {name:?} at byte {offset}")]
    DuplicateName { offset: usize, name: String },
    #[error("tensor {name:?} at byte {offset} has unsupported rank {rank} (expected 1..=4)")]
    UnsupportedRank { offset: usize, name: String, rank: u32 },
    #[error("tensor {name:?} at byte {offset} has a zero or oversized dimension")]
    BadDims { offset: usize, name: String },
    #[error("{count} trailing bytes after last tensor at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("tensor {name:?} has {actual} elements, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("tensor name {0:?} is longer than u32::MAX or not ASCII")]
    UnencodableName(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightMetadata {
    pub version: u32,
    /// Seed used by [`init_random_weights`]; not persisted in the file.
    pub seed: Option<u64>,
}

/// Ordered map from layer name to tensor. Iteration follows insertion (and
/// therefore file) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    tensors: IndexMap<String, Tensor>,
    pub metadata: WeightMetadata,
}

impl WeightStore {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
            metadata: WeightMetadata {
                version: FORMAT_VERSION,
                seed: None,
            },
        }
    }

    /// Inserts or replaces a tensor, returning the previous one.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WeightsError> {
        let payload: usize = self
            .tensors
            .iter()
            .map(|(k, t)| 4 + k.len() + 4 + 16 + 4 * t.data().len())
            .sum();
        let mut out = Vec::with_capacity(HEADER_LEN + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            let len = u32::try_from(name.len()).map_err(|_| WeightsError::UnencodableName(name.clone()))?;
            if !is_valid_name(name.as_bytes()) {
                return Err(WeightsError::UnencodableName(name.clone()));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&4u32.to_le_bytes());
            for d in tensor.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(WeightsError::BadMagic { found: magic.to_vec() });
        }
        let version_at = r.pos;
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(WeightsError::UnsupportedVersion {
                offset: version_at,
                version,
            });
        }
        let count = r.u32("tensor count")?;

        let mut store = WeightStore::new();
        for _ in 0..count {
            let entry_at = r.pos;
            let name_len = r.u32("name length")? as usize;
            let name_at = r.pos;
            let name_bytes = r.take(name_len, "tensor name")?;
            if !is_valid_name(name_bytes) {
                return Err(WeightsError::InvalidName { offset: name_at });
            }
            let name = String::from_utf8_lossy(name_bytes).into_owned();
            if store.tensors.contains_key(&name) {
                return Err(WeightsError::DuplicateName { offset: entry_at, name });
            }
            let rank_at = r.pos;
            let rank = r.u32("rank")?;
            if !(1..=4).contains(&rank) {
                return Err(WeightsError::UnsupportedRank {
                    offset: rank_at,
                    name,
                    rank,
                });
            }
            let mut dims = [1usize; 4];
            for slot in &mut dims[4 - rank as usize..] {
                *slot = r.u32("dimension")? as usize;
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| WeightsError::BadDims {
                    offset: rank_at,
                    name: name.clone(),
                })?;
            let byte_len = numel.checked_mul(4).ok_or_else(|| WeightsError::BadDims {
                offset: rank_at,
                name: name.clone(),
            })?;
            let raw = r.take(byte_len, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store
                .tensors
                .insert(name, Tensor::from_parts(Shape::from_dims(dims), data));
        }
        if r.pos != bytes.len() {
            return Err(WeightsError::TrailingBytes {
                offset: r.pos,
                count: bytes.len() - r.pos,
            });
        }
        Ok(store)
    }

    /// Checks that every layer of `spec` has weight and bias tensors of the
    /// right shape.
    pub fn validate_against(&self, spec: &NetworkSpec) -> Result<(), crate::net::NetError> {
        for layer in spec.layers() {
            crate::net::layer_weights(self, &layer)?;
        }
        Ok(())
    }
}

fn is_valid_name(bytes: &[u8]) -> bool {
    !bytes.is_empty() && bytes.iter().all(|b| b.is_ascii_graphic())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightsError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(WeightsError::Truncated {
                offset: self.pos,
                what,
                expected: n,
                actual: available,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightsError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    let bytes = store.to_bytes()?;
    fs::write(path, bytes).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    WeightStore::from_bytes(&bytes)
}

pub fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

pub fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

fn fans(layer: &LayerSpec) -> (usize, usize) {
    let p = &layer.params;
    let area = p.kernel.0 * p.kernel.1;
    match p.kind {
        ConvKind::Full | ConvKind::Pointwise => (area * p.in_channels, area * p.out_channels),
        ConvKind::Depthwise => (area, area),
    }
}

/// Glorot-uniform weights and zero biases for every layer of `spec`.
///
/// Layers are drawn in ladder order from one ChaCha8 stream, so the store is a
/// pure function of `(spec, seed)`.
pub fn init_random_weights(spec: &NetworkSpec, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    store.metadata.seed = Some(seed);
    for layer in spec.layers() {
        let (fan_in, fan_out) = fans(&layer);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let shape = layer.params.weight_shape();
        let data = (0..shape.numel()).map(|_| dist.sample(&mut rng)).collect();
        store.insert(weight_name(&layer.name), Tensor::from_parts(shape, data));
        let bias_shape = Shape::new(1, 1, 1, layer.params.out_channels);
        store.insert(bias_name(&layer.name), Tensor::from_parts(bias_shape, vec![0.0; bias_shape.numel()]));
    }
    store
}
