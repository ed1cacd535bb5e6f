//! Codebook embeddings and similarity-ordered neighbor lists.
//!
//! Similarities are cosine similarities computed in `f64`. For each entry
//! the codebook stores the other entries sorted by descending similarity,
//! ties broken by ascending index. Codebooks larger than
//! [`FULL_NEIGHBOR_LIMIT`] keep only the top [`TRUNCATED_NEIGHBORS`]
//! neighbors per entry; callers that walk a list to its end must fall back
//! to an exhaustive scan (see [`Codebook::neighbors_complete`]).
//!
//! # File format
//!
//! All integers little-endian:
//!
//! | offset | size  | field                                   |
//! |--------|-------|-----------------------------------------|
//! | 0      | 4     | magic `b"TMCB"`                         |
//! | 4      | 4     | format version (`u32`, currently 1)     |
//! | 8      | 4     | K, entry count (`u32`)                  |
//! | 12     | 4     | D, embedding dimension (`u32`)          |
//! | 16     | 4·K·D | embeddings, row-major, `f32`            |

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

pub type TokenId = u32;

/// Codebooks up to this size keep complete neighbor lists.
pub const FULL_NEIGHBOR_LIMIT: usize = 4096;
/// List length kept per entry above [`FULL_NEIGHBOR_LIMIT`].
pub const TRUNCATED_NEIGHBORS: usize = 1024;

const MAGIC: &[u8; 4] = b"TMCB";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Codebook {
    size: usize,
    dim: usize,
    embeddings: Vec<f64>,
    norms: Vec<f64>,
    neighbor_width: usize,
    neighbors: Vec<TokenId>,
}

impl Codebook {
    /// Builds a codebook from `size × dim` row-major embeddings.
    pub fn new(size: usize, dim: usize, embeddings: Vec<f64>) -> Result<Self> {
        let width = if size > FULL_NEIGHBOR_LIMIT {
            TRUNCATED_NEIGHBORS
        } else {
            size.saturating_sub(1)
        };
        Self::with_neighbor_width(size, dim, embeddings, width)
    }

    /// Like [`Codebook::new`] with an explicit neighbor-list length
    /// (clamped to `size - 1`).
    pub fn with_neighbor_width(size: usize, dim: usize, embeddings: Vec<f64>, width: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Parameter(format!(
                "codebook needs at least 2 entries, got {size}"
            )));
        }
        if dim < 1 {
            return Err(Error::Parameter("embedding dimension must be at least 1".into()));
        }
        if embeddings.len() != size * dim {
            return Err(Error::Length {
                what: "codebook embeddings",
                expected: size * dim,
                got: embeddings.len(),
            });
        }
        let mut norms = Vec::with_capacity(size);
        for (index, row) in embeddings.chunks_exact(dim).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::ZeroNorm { index });
            }
            norms.push(norm);
        }
        let mut codebook = Codebook {
            size,
            dim,
            embeddings,
            norms,
            neighbor_width: width.min(size - 1),
            neighbors: Vec::new(),
        };
        codebook.build_neighbor_lists();
        Ok(codebook)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, index: usize) -> &[f64] {
        &self.embeddings[index * self.dim..(index + 1) * self.dim]
    }

    /// Cosine similarity between entries `i` and `j`.
    pub fn cosine_similarity(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i)?;
        self.check(j)?;
        Ok(self.sim(i, j))
    }

    /// Unchecked similarity; indices must be in range.
    pub(crate) fn sim(&self, i: usize, j: usize) -> f64 {
        let dot: f64 = self
            .embedding(i)
            .iter()
            .zip(self.embedding(j))
            .map(|(a, b)| a * b)
            .sum();
        (dot / (self.norms[i] * self.norms[j])).clamp(-1.0, 1.0)
    }

    /// Entries ordered by descending similarity to `index`.
    pub fn neighbors(&self, index: usize) -> &[TokenId] {
        &self.neighbors[index * self.neighbor_width..(index + 1) * self.neighbor_width]
    }

    /// True when every list holds all `K - 1` other entries.
    pub fn neighbors_complete(&self) -> bool {
        self.neighbor_width == self.size - 1
    }

    fn check(&self, index: usize) -> Result<()> {
        if index < self.size {
            Ok(())
        } else {
            Err(Error::Index { index, len: self.size })
        }
    }

    fn build_neighbor_lists(&mut self) {
        let width = self.neighbor_width;
        let this = &*self;
        let rows: Vec<Vec<TokenId>> = (0..this.size)
            .into_par_iter()
            .map(|i| {
                let mut scored: Vec<(f64, TokenId)> = (0..this.size)
                    .filter(|&j| j != i)
                    .map(|j| (this.sim(i, j), j as TokenId))
                    .collect();
                if width < scored.len() {
                    scored.select_nth_unstable_by(width, neighbor_order);
                    scored.truncate(width);
                }
                scored.sort_unstable_by(neighbor_order);
                scored.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        self.neighbors = rows.concat();
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.size as u32).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        for &x in &self.embeddings {
            out.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("not a codebook file (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported codebook version {version}")));
        }
        let (size, dim) = (word(8) as usize, word(12) as usize);
        let count = size
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("codebook dimensions overflow".into()))?;
        let mut raw = vec![0u8; count * 4];
        input.read_exact(&mut raw)?;
        let embeddings = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Codebook::new(size, dim, embeddings)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn neighbor_order(a: &(f64, TokenId), b: &(f64, TokenId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Random unit-norm codebook: each row is a standard normal vector scaled
/// to length one. Deterministic in `(seed, size, dim)`.
pub fn synth_codebook(seed: u64, size: usize, dim: usize) -> Result<Codebook> {
    if size < 2 || dim < 1 {
        return Err(Error::Parameter(format!(
            "synthetic codebook needs K >= 2 and D >= 1, got K={size}, D={dim}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut embeddings = Vec::with_capacity(size * dim);
    let mut row = vec![0.0f64; dim];
    for _ in 0..size {
        let norm = loop {
            for x in row.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        embeddings.extend(row.iter().map(|x| x / norm));
    }
    Codebook::new(size, dim, embeddings)
}
