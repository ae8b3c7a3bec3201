//! Training samples as a flat `n × D` matrix.
//!
//! Two on-disk formats are read:
//!
//! * CIFAR-10 binary batches: records of one label byte followed by 3072
//!   pixel bytes, channel-planar (all R, then G, then B), rows top to bottom.
//! * Raw tensors: a little-endian `f32` blob in row-major `n × D` order with a
//!   JSON sidecar `{n, D, shape, value_range, layout?, ids?}`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_PIXELS: usize = 32 * 32 * 3;

/// Interval the sample entries were scaled into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 2]", into = "[f32; 2]")]
pub struct ValueRange {
    pub lo: f32,
    pub hi: f32,
}

impl ValueRange {
    pub const SYMMETRIC: ValueRange = ValueRange { lo: -1.0, hi: 1.0 };
    pub const UNIT: ValueRange = ValueRange { lo: 0.0, hi: 1.0 };

    pub fn contains(&self, x: f32) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn scale_byte(&self, b: u8) -> f32 {
        match b {
            0 => self.lo,
            255 => self.hi,
            _ => self.lo + (b as f32 / 255.0) * (self.hi - self.lo),
        }
    }
}

impl Default for ValueRange {
    fn default() -> Self {
        Self::SYMMETRIC
    }
}

impl From<[f32; 2]> for ValueRange {
    fn from([lo, hi]: [f32; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<ValueRange> for [f32; 2] {
    fn from(r: ValueRange) -> Self {
        [r.lo, r.hi]
    }
}

/// Memory order of an `H × W × C` image inside a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelLayout {
    /// `(h, w, c)` with `c` fastest.
    #[default]
    Interleaved,
    /// `(c, h, w)` with `w` fastest, as in CIFAR-10 batches.
    Planar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<f32>,
    dim: usize,
    ids: Vec<String>,
    value_range: ValueRange,
    shape: Vec<usize>,
    layout: PixelLayout,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMeta {
    n: usize,
    #[serde(rename = "D")]
    dim: usize,
    shape: Vec<usize>,
    value_range: ValueRange,
    #[serde(default)]
    layout: PixelLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        samples: Vec<f32>,
        dim: usize,
        ids: Vec<String>,
        value_range: ValueRange,
        shape: Vec<usize>,
        layout: PixelLayout,
    ) -> Result<Self> {
        if dim == 0 || ids.is_empty() {
            return Err(Error::format("a dataset needs n >= 1 and D >= 1"));
        }
        if samples.len() != ids.len() * dim {
            return Err(Error::format(format!(
                "{} values do not form {} rows of dimension {dim}",
                samples.len(),
                ids.len()
            )));
        }
        if shape.iter().product::<usize>() != dim {
            return Err(Error::format(format!("shape {shape:?} does not match D={dim}")));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::format(format!("duplicate id {dup:?}")));
        }
        if let Some(pos) = samples.iter().position(|&x| !value_range.contains(x)) {
            return Err(Error::format(format!(
                "value {} at row {} lies outside [{}, {}]",
                samples[pos],
                pos / dim,
                value_range.lo,
                value_range.hi
            )));
        }
        Ok(Self {
            samples,
            dim,
            ids,
            value_range,
            shape,
            layout,
        })
    }

    /// Flat (non-image) dataset from `f64` rows with synthesized ids and the
    /// tightest value range.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::format("rows have unequal lengths"));
        }
        let samples: Vec<f32> = rows.iter().flatten().map(|&x| x as f32).collect();
        let lo = samples.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = samples.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        Self::new(
            samples,
            dim,
            index_ids(rows.len()),
            ValueRange { lo, hi },
            vec![dim],
            PixelLayout::Interleaved,
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn value_range(&self) -> ValueRange {
        self.value_range
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn layout(&self) -> PixelLayout {
        self.layout
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    /// All samples widened to `f64`.
    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), self.dim), |(i, j)| {
            self.samples[i * self.dim + j] as f64
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::domain(format!("index {i} out of range")));
            }
            samples.extend_from_slice(self.row(i));
            ids.push(self.ids[i].clone());
        }
        Self::new(
            samples,
            self.dim,
            ids,
            self.value_range,
            self.shape.clone(),
            self.layout,
        )
    }

    /// SHA-256 over dimension, ids and sample bits, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for id in &self.ids {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
        for x in &self.samples {
            h.update(x.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_cifar10<P: AsRef<Path>>(paths: &[P], range: ValueRange) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::format("no CIFAR-10 batch files given"));
        }
        let mut samples = Vec::new();
        let mut ids = Vec::new();
        for path in paths {
            let path = path.as_ref();
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
                return Err(Error::format(format!(
                    "{}: {} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
                    path.display(),
                    bytes.len()
                )));
            }
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
                // rec[0] is the class label; unconditional models ignore it.
                samples.extend(rec[1..].iter().map(|&b| range.scale_byte(b)));
                ids.push(format!("{name}#{i}"));
            }
        }
        Self::new(
            samples,
            CIFAR_PIXELS,
            ids,
            range,
            vec![32, 32, 3],
            PixelLayout::Planar,
        )
    }

    pub fn load_raw(tensor_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        let (tensor_path, meta_path) = (tensor_path.as_ref(), meta_path.as_ref());
        let meta_text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
        let meta: RawMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::format(format!("{}: {e}", meta_path.display())))?;
        let bytes = fs::read(tensor_path).map_err(|e| Error::io(tensor_path, e))?;
        let expected = 4 * meta.n * meta.dim;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "{}: expected {expected} bytes for n={} D={}, found {}",
                tensor_path.display(),
                meta.n,
                meta.dim,
                bytes.len()
            )));
        }
        let ids = match meta.ids {
            Some(ids) if ids.len() != meta.n => {
                return Err(Error::format(format!(
                    "{} ids declared for n={}",
                    ids.len(),
                    meta.n
                )))
            }
            Some(ids) => ids,
            None => index_ids(meta.n),
        };
        let samples = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(samples, meta.dim, ids, meta.value_range, meta.shape, meta.layout)
    }

    /// Loads `path.f32` with its sidecar `path.json`.
    pub fn load_raw_pair(tensor_path: impl AsRef<Path>) -> Result<Self> {
        let tensor_path = tensor_path.as_ref();
        Self::load_raw(tensor_path, sidecar_path(tensor_path))
    }

    pub fn save_raw(&self, tensor_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
        let (tensor_path, meta_path) = (tensor_path.as_ref(), meta_path.as_ref());
        let bytes: Vec<u8> = self.samples.iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(tensor_path, bytes).map_err(|e| Error::io(tensor_path, e))?;
        let meta = RawMeta {
            n: self.len(),
            dim: self.dim,
            shape: self.shape.clone(),
            value_range: self.value_range,
            layout: self.layout,
            ids: Some(self.ids.clone()),
        };
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        fs::write(meta_path, text).map_err(|e| Error::io(meta_path, e))
    }

    /// Originals followed by horizontally mirrored copies with `+hflip` ids.
    pub fn augment_hflip(&self) -> Result<Self> {
        let [h, w, c] = match self.shape[..] {
            [h, w, c] => [h, w, c],
            _ => {
                return Err(Error::Unsupported(format!(
                    "horizontal flip needs an H×W×C shape, got {:?}",
                    self.shape
                )))
            }
        };
        let index = |y: usize, x: usize, ch: usize| match self.layout {
            PixelLayout::Interleaved => (y * w + x) * c + ch,
            PixelLayout::Planar => ch * h * w + y * w + x,
        };
        let mut samples = self.samples.clone();
        samples.reserve(self.samples.len());
        for i in 0..self.len() {
            let src = self.row(i);
            let mut flipped = vec![0.0f32; self.dim];
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        flipped[index(y, x, ch)] = src[index(y, w - 1 - x, ch)];
                    }
                }
            }
            samples.extend_from_slice(&flipped);
        }
        let ids = self
            .ids
            .iter()
            .cloned()
            .chain(self.ids.iter().map(|id| format!("{id}+hflip")))
            .collect();
        Self::new(
            samples,
            self.dim,
            ids,
            self.value_range,
            self.shape.clone(),
            self.layout,
        )
    }

    /// Seeded disjoint partition into `(kept, held_out)`; both keep the
    /// original row order.
    pub fn split(&self, held_out: usize, seed: u64) -> Result<(Self, Self)> {
        if held_out == 0 || held_out >= self.len() {
            return Err(Error::domain(format!(
                "held_out must lie in 1..{}, got {held_out}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (held, kept) = order.split_at_mut(held_out);
        held.sort_unstable();
        kept.sort_unstable();
        Ok((self.subset(kept)?, self.subset(held)?))
    }
}

pub fn sidecar_path(tensor_path: &Path) -> PathBuf {
    tensor_path.with_extension("json")
}

fn index_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{i:06}")).collect()
}
