//! Keyed, position-dependent green/red partitioning of the codebook and
//! similarity-guided token replacement.
//!
//! The partition at position `i` is derived from `SHA-256(key || i)` (with
//! `i` as 8 big-endian bytes). The seed keys a pseudorandom permutation of
//! the codebook indices; a token is green when its rank under that
//! permutation is below `floor(gamma * K)`.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::codebook::{Codebook, TokenId};
use crate::error::{Error, Result};
use crate::permutation::KeyedPermutation;

pub const DEFAULT_GAMMA: f64 = 0.5;

/// Secret watermark key, 16 to 64 bytes. `Debug` never prints the bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(Vec<u8>);

impl SecretKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if !(16..=64).contains(&bytes.len()) {
            return Err(Error::KeyLength(bytes.len()));
        }
        Ok(SecretKey(bytes))
    }

    pub fn from_hex(hex_str: &str) -> Result<Self> {
        let bytes = hex::decode(hex_str.trim()).map_err(|e| Error::Parameter(format!("key is not valid hex: {e}")))?;
        Self::new(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey(<{} bytes>)", self.0.len())
    }
}

/// How partitions vary with position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// A fresh partition per position, seeded by `H(key || position)`.
    #[default]
    Adaptive,
    /// One partition shared by every position, seeded by `H(key)`.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Green,
    Red,
}

impl Side {
    pub fn for_bit(bit: bool) -> Side {
        if bit {
            Side::Green
        } else {
            Side::Red
        }
    }
}

#[derive(Debug, Clone)]
pub struct PartitionSpec {
    key: SecretKey,
    gamma: f64,
    codebook_size: usize,
    green_count: usize,
    mode: PartitionMode,
}

impl PartitionSpec {
    pub fn new(key: SecretKey, gamma: f64, codebook_size: usize) -> Result<Self> {
        Self::with_mode(key, gamma, codebook_size, PartitionMode::Adaptive)
    }

    pub fn with_mode(key: SecretKey, gamma: f64, codebook_size: usize, mode: PartitionMode) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        let green_count = (gamma * codebook_size as f64).floor() as usize;
        if green_count == 0 || green_count >= codebook_size {
            return Err(Error::Parameter(format!(
                "gamma={gamma} with K={codebook_size} leaves an empty green or red set"
            )));
        }
        Ok(PartitionSpec {
            key,
            gamma,
            codebook_size,
            green_count,
            mode,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn green_count(&self) -> usize {
        self.green_count
    }

    /// Probability that a uniformly random token is green: `floor(gamma K) / K`.
    pub fn green_fraction(&self) -> f64 {
        self.green_count as f64 / self.codebook_size as f64
    }

    pub fn mode(&self) -> PartitionMode {
        self.mode
    }

    pub fn derive_seed(&self, position: u64) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.key.as_bytes());
        if self.mode == PartitionMode::Adaptive {
            hasher.update(position.to_be_bytes());
        }
        hasher.finalize().into()
    }

    pub fn at(&self, position: u64) -> PositionPartition {
        PositionPartition {
            position,
            permutation: KeyedPermutation::new(self.codebook_size as u64, &self.derive_seed(position)),
            green_count: self.green_count as u64,
        }
    }

    pub fn is_green(&self, position: u64, token: TokenId) -> Result<bool> {
        self.check_token(token)?;
        Ok(self.at(position).is_green(token))
    }

    pub fn replace_token(&self, codebook: &Codebook, position: u64, token: TokenId, target: Side) -> Result<TokenId> {
        self.check_codebook(codebook)?;
        self.check_token(token)?;
        Ok(replace_token(codebook, &self.at(position), token, target))
    }

    pub(crate) fn check_token(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.codebook_size {
            Ok(())
        } else {
            Err(Error::Index {
                index: token as usize,
                len: self.codebook_size,
            })
        }
    }

    pub(crate) fn check_codebook(&self, codebook: &Codebook) -> Result<()> {
        if codebook.size() == self.codebook_size {
            Ok(())
        } else {
            Err(Error::Length {
                what: "codebook size",
                expected: self.codebook_size,
                got: codebook.size(),
            })
        }
    }
}

/// The green/red split at a single position.
#[derive(Debug, Clone)]
pub struct PositionPartition {
    position: u64,
    permutation: KeyedPermutation,
    green_count: u64,
}

impl PositionPartition {
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Rank of `token` in this position's permutation.
    pub fn rank(&self, token: TokenId) -> u64 {
        self.permutation.forward(token as u64)
    }

    pub fn is_green(&self, token: TokenId) -> bool {
        self.rank(token) < self.green_count
    }

    pub fn side(&self, token: TokenId) -> Side {
        if self.is_green(token) {
            Side::Green
        } else {
            Side::Red
        }
    }

    /// Green tokens in permutation order.
    pub fn green_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.green_count).map(|r| self.permutation.inverse(r) as TokenId)
    }
}

/// Returns `token` if it already lies on `target`, otherwise the
/// target-side entry most similar to it (lowest index on ties).
///
/// `token` must be a valid index into `codebook`, and the partition must
/// have been built for the same codebook size.
pub fn replace_token(codebook: &Codebook, partition: &PositionPartition, token: TokenId, target: Side) -> TokenId {
    if partition.side(token) == target {
        return token;
    }
    if let Some(&found) = codebook
        .neighbors(token as usize)
        .iter()
        .find(|&&c| partition.side(c) == target)
    {
        return found;
    }
    // Truncated list exhausted.
    let t = token as usize;
    let mut best: Option<(f64, usize)> = None;
    for c in 0..codebook.size() {
        if c == t || partition.side(c as TokenId) != target {
            continue;
        }
        let s = codebook.sim(t, c);
        if best.is_none_or(|(bs, _)| s > bs) {
            best = Some((s, c));
        }
    }
    best.map(|(_, c)| c as TokenId)
        .expect("both sides of a partition are non-empty")
}
