//! Block-wise multi-bit encoding.
//!
//! The `N` token positions are split into `n` contiguous blocks, one per
//! codeword bit. Embedding pushes every token of a 1-block onto the green
//! side of its position's partition and every token of a 0-block onto the
//! red side. Extraction measures each block's green ratio against the base
//! (un-swapped) partition and thresholds it.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::asg::{replace_token, PartitionSpec, Side};
use crate::codebook::{Codebook, TokenId};
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatermarkLayout {
    n_tokens: usize,
    blocks: Vec<Range<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale_boundaries: Option<Vec<usize>>,
}

impl WatermarkLayout {
    /// Equal-size split: block `j` (0-based) is
    /// `[floor(j N / n), floor((j+1) N / n))`.
    pub fn partition_blocks(n_tokens: usize, n_blocks: usize) -> Result<Self> {
        if n_blocks == 0 {
            return Err(Error::Parameter("block count must be positive".into()));
        }
        if n_blocks > n_tokens {
            return Err(Error::Capacity {
                blocks: n_blocks,
                tokens: n_tokens,
            });
        }
        Ok(WatermarkLayout {
            n_tokens,
            blocks: equal_split(0..n_tokens, n_blocks),
            scale_boundaries: None,
        })
    }

    /// Layout from explicit block ranges, which must be non-empty and tile
    /// `0..n_tokens` in order.
    pub fn from_blocks(
        n_tokens: usize,
        blocks: Vec<Range<usize>>,
        scale_boundaries: Option<Vec<usize>>,
    ) -> Result<Self> {
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end <= b.start {
                return Err(Error::Format(format!("block {b:?} breaks the tiling at {next}")));
            }
            next = b.end;
        }
        if next != n_tokens || blocks.is_empty() {
            return Err(Error::Format(format!("blocks cover {next} of {n_tokens} positions")));
        }
        Ok(WatermarkLayout {
            n_tokens,
            blocks,
            scale_boundaries,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn scale_boundaries(&self) -> Option<&[usize]> {
        self.scale_boundaries.as_deref()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    /// Number of positions of each block inside `offset..offset + len`.
    pub fn observed_block_sizes(&self, offset: usize, len: usize) -> Vec<usize> {
        let window = offset..offset + len;
        self.blocks
            .iter()
            .map(|b| b.end.min(window.end).saturating_sub(b.start.max(window.start)))
            .collect()
    }
}

/// Splits `range` into `parts` contiguous pieces using the floor rule.
pub(crate) fn equal_split(range: Range<usize>, parts: usize) -> Vec<Range<usize>> {
    let len = range.len();
    (0..parts)
        .map(|j| range.start + j * len / parts..range.start + (j + 1) * len / parts)
        .collect()
}

/// Watermarks `tokens` with `codeword`, one bit per block.
pub fn embed_sequence(
    tokens: &[TokenId],
    layout: &WatermarkLayout,
    codeword: &[bool],
    spec: &PartitionSpec,
    codebook: &Codebook,
) -> Result<Vec<TokenId>> {
    check_len("token sequence", layout.n_tokens, tokens.len())?;
    check_len("codeword", layout.n_blocks(), codeword.len())?;
    spec.check_codebook(codebook)?;
    for &t in tokens {
        spec.check_token(t)?;
    }
    let mut out = tokens.to_vec();
    for (block, &bit) in layout.blocks.iter().zip(codeword) {
        let target = Side::for_bit(bit);
        for i in block.clone() {
            out[i] = replace_token(codebook, &spec.at(i as u64), tokens[i], target);
        }
    }
    Ok(out)
}

/// Green count and number of observed positions in one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockTally {
    pub green: usize,
    pub observed: usize,
}

impl BlockTally {
    pub fn ratio(&self) -> Option<f64> {
        (self.observed > 0).then(|| self.green as f64 / self.observed as f64)
    }
}

/// Per-position green indicators for tokens at positions
/// `offset..offset + tokens.len()`.
pub fn green_flags(tokens: &[TokenId], offset: usize, spec: &PartitionSpec) -> Result<Vec<bool>> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| spec.is_green((offset + i) as u64, t))
        .collect()
}

/// Tallies each block over the observed window `offset..offset + len`.
/// Blocks outside the window have `observed == 0`.
pub fn tally_blocks(
    tokens: &[TokenId],
    offset: usize,
    layout: &WatermarkLayout,
    spec: &PartitionSpec,
) -> Result<Vec<BlockTally>> {
    if offset + tokens.len() > layout.n_tokens {
        return Err(Error::Length {
            what: "observed window",
            expected: layout.n_tokens,
            got: offset + tokens.len(),
        });
    }
    let flags = green_flags(tokens, offset, spec)?;
    Ok(layout
        .blocks
        .iter()
        .map(|b| {
            let lo = b.start.max(offset);
            let hi = b.end.min(offset + tokens.len());
            let observed = hi.saturating_sub(lo);
            let green = (lo..lo + observed).filter(|&p| flags[p - offset]).count();
            BlockTally { green, observed }
        })
        .collect())
}

/// Green ratio of each block against the base partition.
pub fn block_green_ratios(tokens: &[TokenId], layout: &WatermarkLayout, spec: &PartitionSpec) -> Result<Vec<f64>> {
    check_len("token sequence", layout.n_tokens, tokens.len())?;
    Ok(tally_blocks(tokens, 0, layout, spec)?
        .iter()
        .map(|t| t.ratio().expect("blocks are non-empty"))
        .collect())
}

/// `bit_j = r_j > tau`.
pub fn decode_bits(ratios: &[f64], tau: f64) -> Vec<bool> {
    ratios.iter().map(|&r| r > tau).collect()
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Length { what, expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asg::SecretKey;
    use crate::codebook::synth_codebook;
    use crate::rng;
    use rand::Rng;

    fn spec(k: usize) -> PartitionSpec {
        PartitionSpec::new(SecretKey::new(vec![9u8; 32]).unwrap(), 0.5, k).unwrap()
    }

    #[test]
    fn ten_tokens_three_blocks() {
        let l = WatermarkLayout::partition_blocks(10, 3).unwrap();
        assert_eq!(l.blocks(), &[0..3, 3..6, 6..10]);
    }

    #[test]
    fn one_position_per_block_when_n_equals_len() {
        let l = WatermarkLayout::partition_blocks(7, 7).unwrap();
        assert!(l.block_sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn n256_into_63_blocks_matches_floor_oracle() {
        let l = WatermarkLayout::partition_blocks(256, 63).unwrap();
        let mut owner = vec![usize::MAX; 256];
        for j in 1..=63usize {
            for (i, o) in owner.iter_mut().enumerate() {
                if (j - 1) * 256 / 63 <= i && i < j * 256 / 63 {
                    *o = j - 1;
                }
            }
        }
        for (j, b) in l.blocks().iter().enumerate() {
            for i in b.clone() {
                assert_eq!(owner[i], j);
            }
        }
        let sizes = l.block_sizes();
        assert!(sizes.iter().all(|s| *s == 4 || *s == 5));
        assert_eq!(sizes.iter().sum::<usize>(), 256);
    }

    #[test]
    fn too_many_blocks_is_a_capacity_error() {
        assert!(matches!(
            WatermarkLayout::partition_blocks(5, 6),
            Err(Error::Capacity { blocks: 6, tokens: 5 })
        ));
        assert!(WatermarkLayout::partition_blocks(5, 0).is_err());
    }

    #[test]
    fn from_blocks_validates_tiling() {
        assert!(WatermarkLayout::from_blocks(6, vec![0..2, 2..6], None).is_ok());
        assert!(WatermarkLayout::from_blocks(6, vec![0..2, 3..6], None).is_err());
        assert!(WatermarkLayout::from_blocks(6, vec![0..2, 2..5], None).is_err());
        assert!(WatermarkLayout::from_blocks(6, vec![0..0, 0..6], None).is_err());
    }

    #[test]
    fn observed_sizes_clip_to_window() {
        let l = WatermarkLayout::partition_blocks(10, 3).unwrap();
        assert_eq!(l.observed_block_sizes(4, 6), vec![0, 2, 4]);
        assert_eq!(l.observed_block_sizes(0, 10), vec![3, 3, 4]);
    }

    #[test]
    fn all_green_input_with_ones_codeword_is_unchanged() {
        let cb = synth_codebook(1, 256, 8).unwrap();
        let s = spec(256);
        let tokens: Vec<TokenId> = (0..64).map(|i| s.at(i).green_tokens().next().unwrap()).collect();
        let l = WatermarkLayout::partition_blocks(64, 8).unwrap();
        assert_eq!(embed_sequence(&tokens, &l, &[true; 8], &s, &cb).unwrap(), tokens);
    }

    #[test]
    fn embedding_forces_each_block_to_its_bit() {
        let cb = synth_codebook(2, 512, 8).unwrap();
        let s = spec(512);
        let mut r = rng::seeded(3);
        let tokens: Vec<TokenId> = (0..200).map(|_| r.random_range(0..512)).collect();
        let l = WatermarkLayout::partition_blocks(200, 31).unwrap();
        let cw: Vec<bool> = (0..31).map(|_| r.random()).collect();
        let out = embed_sequence(&tokens, &l, &cw, &s, &cb).unwrap();
        for (b, &bit) in l.blocks().iter().zip(&cw) {
            for i in b.clone() {
                assert_eq!(s.is_green(i as u64, out[i]).unwrap(), bit);
                if s.is_green(i as u64, tokens[i]).unwrap() == bit {
                    assert_eq!(out[i], tokens[i]);
                }
            }
        }
        let ratios = block_green_ratios(&out, &l, &s).unwrap();
        for (r, &bit) in ratios.iter().zip(&cw) {
            assert_eq!(*r, if bit { 1.0 } else { 0.0 });
        }
        assert_eq!(decode_bits(&ratios, DEFAULT_TAU), cw);
    }

    #[test]
    fn structural_errors() {
        let cb = synth_codebook(2, 16, 2).unwrap();
        let s = spec(16);
        let l = WatermarkLayout::partition_blocks(8, 2).unwrap();
        assert!(embed_sequence(&[0; 7], &l, &[true, false], &s, &cb).is_err());
        assert!(embed_sequence(&[0; 8], &l, &[true], &s, &cb).is_err());
        assert!(embed_sequence(&[16; 8], &l, &[true, true], &s, &cb).is_err());
        let other = synth_codebook(2, 32, 2).unwrap();
        assert!(embed_sequence(&[0; 8], &l, &[true, true], &s, &other).is_err());
        assert!(block_green_ratios(&[0; 9], &l, &s).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(
            decode_bits(&[0.9, 0.5, 0.1, 0.5000001], 0.5),
            vec![true, false, false, true]
        );
    }

    #[test]
    fn tallies_sum_to_global_green_count() {
        let s = spec(1024);
        let mut r = rng::seeded(8);
        let tokens: Vec<TokenId> = (0..300).map(|_| r.random_range(0..1024)).collect();
        let l = WatermarkLayout::partition_blocks(300, 37).unwrap();
        let ratios = block_green_ratios(&tokens, &l, &s).unwrap();
        let weighted: f64 = ratios.iter().zip(l.block_sizes()).map(|(r, n)| r * n as f64).sum();
        let global = green_flags(&tokens, 0, &s).unwrap().iter().filter(|&&g| g).count();
        assert!((weighted - global as f64).abs() < 1e-9);
        assert!(ratios.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn windowed_tally_uses_absolute_positions() {
        let s = spec(64);
        let mut r = rng::seeded(4);
        let tokens: Vec<TokenId> = (0..40).map(|_| r.random_range(0..64)).collect();
        let l = WatermarkLayout::partition_blocks(40, 4).unwrap();
        let full = tally_blocks(&tokens, 0, &l, &s).unwrap();
        let part = tally_blocks(&tokens[15..], 15, &l, &s).unwrap();
        assert_eq!(part[0], BlockTally { green: 0, observed: 0 });
        assert_eq!(part[1].observed, 5);
        assert_eq!(part[2], full[2]);
        assert_eq!(part[3], full[3]);
        assert!(tally_blocks(&tokens, 1, &l, &s).is_err());
    }
}
