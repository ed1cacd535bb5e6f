//! Paradigm adapters: token sequences from next-token (raster) and
//! next-scale (coarse-to-fine, concatenated) generators, synthetic
//! generators standing in for a model, and scale-aware block layout.
//!
//! # Sequence file format
//!
//! Binary, all integers little-endian `u32` unless noted:
//!
//! | field          | size  | notes                                        |
//! |----------------|-------|----------------------------------------------|
//! | magic          | 4     | `b"TMTS"`                                    |
//! | version        | 2     | `u16`, currently 1                           |
//! | paradigm       | 1     | 0 = next-token, 1 = next-scale               |
//! | reserved       | 1     | 0                                            |
//! | N              | 4     | token count                                  |
//! | K              | 4     | codebook size                                |
//! | offset         | 4     | absolute position of the first token         |
//! | S              | 4     | number of scale boundaries (0 for next-token)|
//! | boundaries     | 4·S   | cumulative token counts, last equals N       |
//! | tokens         | 4·N   |                                              |
//!
//! The text format has a `# tokenmark-sequence v1` line, a
//! `# paradigm=.. codebook=.. offset=.. scales=..` line (scales
//! comma-separated, empty for next-token), then one token per line.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bme::{equal_split, WatermarkLayout};
use crate::codebook::{Codebook, TokenId};
use crate::error::{Error, Result};
use crate::rng;

/// Per-scale token counts of a ten-scale, 680-token VAR-style schedule:
/// squares of 1, 2, 3, 4, 5, 6, 8, 10, 13, 16.
pub const VAR_SCALES: [usize; 10] = [1, 4, 9, 16, 25, 36, 64, 100, 169, 256];

const MAGIC: &[u8; 4] = b"TMTS";
const FORMAT_VERSION: u16 = 1;
const TEXT_HEADER: &str = "# tokenmark-sequence v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    NextToken,
    NextScale,
}

impl Paradigm {
    fn tag(self) -> u8 {
        match self {
            Paradigm::NextToken => 0,
            Paradigm::NextScale => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Paradigm::NextToken),
            1 => Ok(Paradigm::NextScale),
            _ => Err(Error::Format(format!("unknown paradigm tag {tag}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Paradigm::NextToken => "next-token",
            Paradigm::NextScale => "next-scale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    paradigm: Paradigm,
    scale_boundaries: Option<Vec<usize>>,
    codebook_size: usize,
    offset: usize,
}

impl TokenSequence {
    pub fn next_token(tokens: Vec<TokenId>, codebook_size: usize) -> Result<Self> {
        Self::build(tokens, Paradigm::NextToken, None, codebook_size, 0)
    }

    /// `boundaries` are cumulative per-scale token counts ending at `N`.
    pub fn next_scale(tokens: Vec<TokenId>, boundaries: Vec<usize>, codebook_size: usize) -> Result<Self> {
        Self::build(tokens, Paradigm::NextScale, Some(boundaries), codebook_size, 0)
    }

    fn build(
        tokens: Vec<TokenId>,
        paradigm: Paradigm,
        scale_boundaries: Option<Vec<usize>>,
        codebook_size: usize,
        offset: usize,
    ) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= codebook_size) {
            return Err(Error::Index {
                index: bad as usize,
                len: codebook_size,
            });
        }
        match (paradigm, &scale_boundaries) {
            (Paradigm::NextToken, Some(_)) => {
                return Err(Error::Paradigm("next-token sequences have no scale boundaries".into()))
            }
            (Paradigm::NextScale, None) => {
                return Err(Error::Paradigm("next-scale sequences need scale boundaries".into()))
            }
            (Paradigm::NextScale, Some(b)) => {
                let increasing = b.first().is_some_and(|&f| f > 0) && b.windows(2).all(|w| w[0] < w[1]);
                if !increasing || b.last() != Some(&tokens.len()) {
                    return Err(Error::Format(format!(
                        "scale boundaries {b:?} must increase strictly and end at {}",
                        tokens.len()
                    )));
                }
            }
            _ => {}
        }
        Ok(TokenSequence {
            tokens,
            paradigm,
            scale_boundaries,
            codebook_size,
            offset,
        })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn paradigm(&self) -> Paradigm {
        self.paradigm
    }

    pub fn scale_boundaries(&self) -> Option<&[usize]> {
        self.scale_boundaries.as_deref()
    }

    pub fn scale_sizes(&self) -> Option<Vec<usize>> {
        self.scale_boundaries.as_ref().map(|b| {
            let mut prev = 0;
            b.iter()
                .map(|&x| {
                    let s = x - prev;
                    prev = x;
                    s
                })
                .collect()
        })
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    /// Absolute position of the first token. Non-zero only after an
    /// alignment-preserving crop.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Same metadata, new tokens of equal length.
    pub fn with_tokens(&self, tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.len() != self.tokens.len() {
            return Err(Error::Length {
                what: "replacement tokens",
                expected: self.tokens.len(),
                got: tokens.len(),
            });
        }
        Self::build(
            tokens,
            self.paradigm,
            self.scale_boundaries.clone(),
            self.codebook_size,
            self.offset,
        )
    }

    /// Same tokens placed at absolute positions starting from `offset`.
    pub fn with_offset(&self, offset: usize) -> Self {
        TokenSequence { offset, ..self.clone() }
    }

    pub(crate) fn with_codebook_size(&self, codebook_size: usize) -> Result<Self> {
        Self::build(
            self.tokens.clone(),
            self.paradigm,
            self.scale_boundaries.clone(),
            codebook_size,
            self.offset,
        )
    }

    pub(crate) fn cropped(&self, removed: usize, aligned: bool) -> TokenSequence {
        let tokens = self.tokens[removed..].to_vec();
        let scale_boundaries = self.scale_boundaries.as_ref().map(|b| {
            b.iter()
                .filter(|&&x| x > removed)
                .map(|&x| x - removed)
                .collect::<Vec<_>>()
        });
        TokenSequence {
            tokens,
            paradigm: self.paradigm,
            scale_boundaries,
            codebook_size: self.codebook_size,
            offset: if aligned { self.offset + removed } else { 0 },
        }
    }

    pub(crate) fn tokens_mut(&mut self) -> &mut [TokenId] {
        &mut self.tokens
    }

    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        let boundaries = self.scale_boundaries.as_deref().unwrap_or(&[]);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&[self.paradigm.tag(), 0])?;
        for v in [self.tokens.len(), self.codebook_size, self.offset, boundaries.len()] {
            out.write_all(&u32_of(v)?.to_le_bytes())?;
        }
        for &b in boundaries {
            out.write_all(&u32_of(b)?.to_le_bytes())?;
        }
        for &t in &self.tokens {
            out.write_all(&t.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut head = [0u8; 24];
        input.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("not a token sequence file (bad magic)".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported sequence version {version}")));
        }
        let paradigm = Paradigm::from_tag(head[6])?;
        let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
        let (n, k, offset, s) = (word(8), word(12), word(16), word(20));
        let boundaries = read_u32s(&mut input, s)?;
        let tokens: Vec<TokenId> = read_u32s(&mut input, n)?.into_iter().map(|t| t as TokenId).collect();
        let boundaries = (paradigm == Paradigm::NextScale).then_some(boundaries);
        Self::build(tokens, paradigm, boundaries, k, offset)
    }

    pub fn write_text(&self, mut out: impl Write) -> Result<()> {
        let scales = self
            .scale_boundaries
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{TEXT_HEADER}")?;
        writeln!(
            out,
            "# paradigm={} codebook={} offset={} scales={}",
            self.paradigm.name(),
            self.codebook_size,
            self.offset,
            scales
        )?;
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TEXT_HEADER) {
            return Err(Error::Format("missing text sequence header".into()));
        }
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| Error::Format("missing metadata line".into()))?;
        let mut paradigm = None;
        let mut codebook = None;
        let mut offset = 0;
        let mut scales = Vec::new();
        for field in meta.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata field `{field}`")))?;
            match key {
                "paradigm" => {
                    paradigm = Some(match value {
                        "next-token" => Paradigm::NextToken,
                        "next-scale" => Paradigm::NextScale,
                        other => return Err(Error::Format(format!("unknown paradigm `{other}`"))),
                    })
                }
                "codebook" => codebook = Some(parse_num(value)?),
                "offset" => offset = parse_num(value)?,
                "scales" if !value.is_empty() => scales = value.split(',').map(parse_num).collect::<Result<_>>()?,
                "scales" => {}
                other => return Err(Error::Format(format!("unknown metadata key `{other}`"))),
            }
        }
        let paradigm = paradigm.ok_or_else(|| Error::Format("metadata lacks paradigm".into()))?;
        let codebook = codebook.ok_or_else(|| Error::Format("metadata lacks codebook".into()))?;
        let tokens = lines
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| parse_num(l).map(|t| t as TokenId))
            .collect::<Result<Vec<_>>>()?;
        let boundaries = (paradigm == Paradigm::NextScale).then_some(scales);
        Self::build(tokens, paradigm, boundaries, codebook, offset)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        if is_text_path(path) {
            self.write_text(&mut buf)?;
        } else {
            self.write_binary(&mut buf)?;
        }
        fs::write(path, buf)?;
        Ok(())
    }

    /// Reads either format; `.txt` files are parsed as text.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_text_path(path) {
            Self::read_text(&fs::read_to_string(path)?)
        } else {
            Self::read_binary(fs::read(path)?.as_slice())
        }
    }
}

fn is_text_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "txt")
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
}

fn read_u32s(input: &mut impl Read, count: usize) -> Result<Vec<usize>> {
    let mut raw = vec![
        0u8;
        count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("length overflow".into()))?
    ];
    input.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect())
}

fn parse_num(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("`{s}` is not a non-negative integer")))
}

/// Token statistics of a synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GeneratorFamily {
    /// Independent uniform tokens.
    Uniform,
    /// With probability `neighbor_prob` the next token is drawn uniformly
    /// from the `neighbors` entries most similar to the previous one,
    /// otherwise uniformly from the codebook.
    Markov { neighbor_prob: f64, neighbors: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct GeneratorConfig {
    pub paradigm: Paradigm,
    /// Token count for next-token generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// Per-scale token counts for next-scale generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<usize>>,
    #[serde(flatten)]
    pub family: GeneratorFamily,
}

impl GeneratorConfig {
    pub fn next_token(length: usize) -> Self {
        GeneratorConfig {
            paradigm: Paradigm::NextToken,
            length: Some(length),
            scales: None,
            family: GeneratorFamily::Uniform,
        }
    }

    pub fn next_scale(scales: &[usize]) -> Self {
        GeneratorConfig {
            paradigm: Paradigm::NextScale,
            length: None,
            scales: Some(scales.to_vec()),
            family: GeneratorFamily::Uniform,
        }
    }

    pub fn with_family(mut self, family: GeneratorFamily) -> Self {
        self.family = family;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.paradigm {
            Paradigm::NextToken => match self.length {
                Some(n) if n > 0 => {}
                _ => {
                    return Err(Error::config(
                        "generator.length",
                        "next-token generation needs a positive length",
                    ))
                }
            },
            Paradigm::NextScale => match &self.scales {
                Some(s) if !s.is_empty() && s.iter().all(|&x| x > 0) => {}
                _ => {
                    return Err(Error::config(
                        "generator.scales",
                        "next-scale generation needs positive scale sizes",
                    ))
                }
            },
        }
        if let GeneratorFamily::Markov {
            neighbor_prob,
            neighbors,
        } = self.family
        {
            if !(0.0..=1.0).contains(&neighbor_prob) || neighbors == 0 {
                return Err(Error::config(
                    "generator.neighbor_prob",
                    "needs neighbor_prob in [0, 1] and neighbors >= 1",
                ));
            }
        }
        Ok(())
    }

    /// Token count of every generated sequence.
    pub fn sequence_len(&self) -> usize {
        match self.paradigm {
            Paradigm::NextToken => self.length.unwrap_or(0),
            Paradigm::NextScale => self.scales.as_ref().map_or(0, |s| s.iter().sum()),
        }
    }

    fn boundaries(&self) -> Option<Vec<usize>> {
        self.scales.as_ref().map(|s| {
            s.iter()
                .scan(0, |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect()
        })
    }
}

/// Draws a sequence from the synthetic generator. The condition is just a
/// seed; identical `(config, seed)` pairs give identical sequences.
pub fn get_token_sequence(config: &GeneratorConfig, codebook: &Codebook, seed: u64) -> Result<TokenSequence> {
    config.validate()?;
    let mut rng = rng::seeded(seed);
    let tokens = sample_tokens(&config.family, config.sequence_len(), codebook, &mut rng);
    let k = codebook.size();
    match config.paradigm {
        Paradigm::NextToken => TokenSequence::next_token(tokens, k),
        Paradigm::NextScale => TokenSequence::next_scale(tokens, config.boundaries().unwrap(), k),
    }
}

pub(crate) fn sample_tokens(
    family: &GeneratorFamily,
    len: usize,
    codebook: &Codebook,
    rng: &mut impl Rng,
) -> Vec<TokenId> {
    let k = codebook.size() as TokenId;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = match *family {
            GeneratorFamily::Markov {
                neighbor_prob,
                neighbors,
            } if i > 0 && rng.random::<f64>() < neighbor_prob => {
                let list = codebook.neighbors(out[i - 1] as usize);
                list[rng.random_range(0..neighbors.min(list.len()))]
            }
            _ => rng.random_range(0..k),
        };
        out.push(t);
    }
    out
}

/// Identity: the token-level stand-in for decoding an image.
pub fn decode_image(seq: &TokenSequence) -> TokenSequence {
    seq.clone()
}

/// Layout for `seq`: the equal split for next-token sequences and the
/// scale-aware layout for next-scale ones.
pub fn layout_for(seq: &TokenSequence, n_blocks: usize) -> Result<WatermarkLayout> {
    match seq.paradigm() {
        Paradigm::NextToken => WatermarkLayout::partition_blocks(seq.len(), n_blocks),
        Paradigm::NextScale => assign_blocks_scale_aware(seq, n_blocks),
    }
}

/// Block layout that respects scale boundaries, coarse scales first.
///
/// With at least as many blocks as scales, blocks are apportioned to
/// scales in proportion to their token counts (largest remainder, every
/// scale at least one block) and each scale is split by the floor rule.
/// With fewer blocks than scales, whole scales are grouped into `n`
/// contiguous groups with cut points as close as possible to `j N / n`.
pub fn assign_blocks_scale_aware(seq: &TokenSequence, n_blocks: usize) -> Result<WatermarkLayout> {
    let sizes = seq
        .scale_sizes()
        .ok_or_else(|| Error::Paradigm("scale-aware layout needs a next-scale sequence".into()))?;
    let boundaries = seq.scale_boundaries().unwrap().to_vec();
    let n_tokens = seq.len();
    if n_blocks == 0 {
        return Err(Error::Parameter("block count must be positive".into()));
    }
    if n_blocks > n_tokens {
        return Err(Error::Capacity {
            blocks: n_blocks,
            tokens: n_tokens,
        });
    }
    let starts: Vec<usize> = std::iter::once(0).chain(boundaries.iter().copied()).collect();
    let blocks = if n_blocks >= sizes.len() {
        apportion_blocks(&sizes, n_blocks)
            .into_iter()
            .enumerate()
            .flat_map(|(s, count)| equal_split(starts[s]..starts[s + 1], count))
            .collect()
    } else {
        group_scales(&starts, n_blocks)
    };
    WatermarkLayout::from_blocks(n_tokens, blocks, Some(boundaries))
}

/// Largest-remainder apportionment of `total` blocks to scales, at least
/// one and at most `size` per scale. Remainder ties favor coarser scales.
pub fn apportion_blocks(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    assert!(total >= sizes.len() && total <= n);
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * sizes[i] % n), i));
    let leftover = total - alloc.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        alloc[i] += 1;
    }
    while let Some(empty) = alloc.iter().position(|&a| a == 0) {
        // Take a block from the scale with the fewest tokens per block.
        let donor = (0..sizes.len())
            .filter(|&i| alloc[i] > 1)
            .min_by(|&a, &b| (sizes[a] * alloc[b]).cmp(&(sizes[b] * alloc[a])).then(b.cmp(&a)))
            .expect("total >= number of scales leaves a donor");
        alloc[donor] -= 1;
        alloc[empty] = 1;
    }
    alloc
}

fn group_scales(starts: &[usize], n_blocks: usize) -> Vec<std::ops::Range<usize>> {
    let scales = starts.len() - 1;
    let n_tokens = starts[scales];
    let mut cuts = vec![0usize];
    for j in 1..n_blocks {
        let lo = cuts[j - 1] + 1;
        let hi = scales - (n_blocks - j);
        let target = j * n_tokens;
        let best = (lo..=hi)
            .min_by_key(|&c| (starts[c] * n_blocks).abs_diff(target))
            .unwrap();
        cuts.push(best);
    }
    cuts.push(scales);
    cuts.windows(2).map(|w| starts[w[0]]..starts[w[1]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::synth_codebook;
    use proptest::prelude::*;

    fn scale_seq(sizes: &[usize]) -> TokenSequence {
        let n: usize = sizes.iter().sum();
        let b = sizes
            .iter()
            .scan(0, |a, &x| {
                *a += x;
                Some(*a)
            })
            .collect();
        TokenSequence::next_scale(vec![0; n], b, 16).unwrap()
    }

    #[test]
    fn next_token_generation() {
        let cb = synth_codebook(1, 64, 4).unwrap();
        let s = get_token_sequence(&GeneratorConfig::next_token(256), &cb, 7).unwrap();
        assert_eq!(s.len(), 256);
        assert!(s.scale_boundaries().is_none());
        assert_eq!(
            s,
            get_token_sequence(&GeneratorConfig::next_token(256), &cb, 7).unwrap()
        );
        assert_ne!(
            s,
            get_token_sequence(&GeneratorConfig::next_token(256), &cb, 8).unwrap()
        );
    }

    #[test]
    fn var_schedule_has_680_tokens_in_ten_scales() {
        let cb = synth_codebook(1, 64, 4).unwrap();
        let s = get_token_sequence(&GeneratorConfig::next_scale(&VAR_SCALES), &cb, 1).unwrap();
        assert_eq!(s.len(), 680);
        assert_eq!(s.scale_boundaries().unwrap().len(), 10);
        assert_eq!(s.scale_sizes().unwrap(), VAR_SCALES.to_vec());
    }

    #[test]
    fn markov_family_follows_neighbors() {
        let cb = synth_codebook(2, 128, 8).unwrap();
        let cfg = GeneratorConfig::next_token(500).with_family(GeneratorFamily::Markov {
            neighbor_prob: 1.0,
            neighbors: 4,
        });
        let s = get_token_sequence(&cfg, &cb, 3).unwrap();
        for w in s.tokens().windows(2) {
            assert!(cb.neighbors(w[0] as usize)[..4].contains(&w[1]));
        }
    }

    #[test]
    fn invalid_generator_configs() {
        let cb = synth_codebook(2, 16, 2).unwrap();
        assert!(get_token_sequence(&GeneratorConfig::next_token(0), &cb, 0).is_err());
        assert!(get_token_sequence(&GeneratorConfig::next_scale(&[]), &cb, 0).is_err());
        let bad = GeneratorConfig::next_token(4).with_family(GeneratorFamily::Markov {
            neighbor_prob: 2.0,
            neighbors: 1,
        });
        assert!(matches!(get_token_sequence(&bad, &cb, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn sequence_invariants_are_checked() {
        assert!(TokenSequence::next_token(vec![16], 16).is_err());
        assert!(TokenSequence::next_scale(vec![0; 5], vec![2, 2, 5], 16).is_err());
        assert!(TokenSequence::next_scale(vec![0; 5], vec![2, 4], 16).is_err());
        assert!(TokenSequence::next_scale(vec![0; 5], vec![0, 5], 16).is_err());
        assert!(TokenSequence::next_scale(vec![0; 5], vec![2, 5], 16).is_ok());
    }

    #[test]
    fn one_block_per_scale() {
        let l = assign_blocks_scale_aware(&scale_seq(&[4, 12]), 2).unwrap();
        assert_eq!(l.blocks(), &[0..4, 4..16]);
    }

    #[test]
    fn four_blocks_over_two_scales() {
        assert_eq!(apportion_blocks(&[4, 12], 4), vec![1, 3]);
        let l = assign_blocks_scale_aware(&scale_seq(&[4, 12]), 4).unwrap();
        assert_eq!(l.blocks(), &[0..4, 4..8, 8..12, 12..16]);
    }

    #[test]
    fn apportionment_matches_hand_computed_largest_remainder() {
        let a = apportion_blocks(&VAR_SCALES, 63);
        assert_eq!(a.iter().sum::<usize>(), 63);
        // quotas 63 s / 680: 0.09 0.37 0.83 1.48 2.32 3.34 5.93 9.26 15.66 23.72
        // floors sum to 58; the five largest remainders (.93 .83 .72 .66 .48)
        // go to scales 6, 2, 9, 8, 3. The two empty scales then take a block
        // from the scale with the fewest tokens per block: scale 3 (16/2),
        // then scale 8 (169/16).
        assert_eq!(a, vec![1, 1, 1, 1, 2, 3, 6, 9, 15, 24]);
    }

    #[test]
    fn fewer_blocks_than_scales_groups_whole_scales() {
        let seq = scale_seq(&VAR_SCALES);
        let l = assign_blocks_scale_aware(&seq, 3).unwrap();
        let b = seq.scale_boundaries().unwrap();
        for r in l.blocks() {
            assert!(r.start == 0 || b.contains(&r.start));
            assert!(b.contains(&r.end));
        }
        assert_eq!(l.n_blocks(), 3);
        // Cut points nearest 680/3 and 2*680/3 at scale boundaries.
        assert_eq!(l.blocks(), &[0..255, 255..424, 424..680]);
    }

    #[test]
    fn scale_layout_errors() {
        assert!(assign_blocks_scale_aware(&scale_seq(&[2, 2]), 5).is_err());
        let nt = TokenSequence::next_token(vec![0; 8], 16).unwrap();
        assert!(matches!(assign_blocks_scale_aware(&nt, 2), Err(Error::Paradigm(_))));
    }

    proptest! {
        #[test]
        fn scale_layout_tiles_and_never_straddles(
            sizes in proptest::collection::vec(1usize..60, 1..12),
            frac in 0.0f64..1.0,
        ) {
            let seq = scale_seq(&sizes);
            let n = seq.len();
            let blocks = 1 + ((n - 1) as f64 * frac) as usize;
            let l = assign_blocks_scale_aware(&seq, blocks).unwrap();
            prop_assert_eq!(l.n_blocks(), blocks);
            prop_assert_eq!(l.block_sizes().iter().sum::<usize>(), n);
            let b = seq.scale_boundaries().unwrap();
            let scale_of = |p: usize| b.iter().position(|&x| p < x).unwrap();
            if blocks >= sizes.len() {
                for r in l.blocks() {
                    prop_assert_eq!(scale_of(r.start), scale_of(r.end - 1));
                }
                let mut prev = 0;
                for r in l.blocks() {
                    prop_assert!(scale_of(r.start) >= prev);
                    prev = scale_of(r.start);
                }
            }
        }

        #[test]
        fn binary_and_text_formats_roundtrip(
            tokens in proptest::collection::vec(0u32..4096, 1..300),
            cut in 0usize..300,
            offset in 0usize..1000,
        ) {
            let n = tokens.len();
            let seq = if cut % 2 == 0 || n < 2 {
                TokenSequence::next_token(tokens, 4096).unwrap()
            } else {
                let c = 1 + cut % (n - 1);
                TokenSequence::next_scale(tokens, vec![c, n], 4096).unwrap()
            };
            let seq = TokenSequence { offset, ..seq };
            let mut bin = Vec::new();
            seq.write_binary(&mut bin).unwrap();
            prop_assert_eq!(&TokenSequence::read_binary(bin.as_slice()).unwrap(), &seq);
            let mut txt = Vec::new();
            seq.write_text(&mut txt).unwrap();
            prop_assert_eq!(&TokenSequence::read_text(std::str::from_utf8(&txt).unwrap()).unwrap(), &seq);
        }
    }

    #[test]
    fn header_bytes_are_pinned() {
        let seq = TokenSequence::next_scale(vec![7, 8, 9], vec![1, 3], 4096).unwrap();
        let mut bin = Vec::new();
        seq.write_binary(&mut bin).unwrap();
        let expected: Vec<u8> = [
            &b"TMTS"[..],
            &[1, 0, 1, 0],
            &3u32.to_le_bytes(),
            &4096u32.to_le_bytes(),
            &0u32.to_le_bytes(),
            &2u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &3u32.to_le_bytes(),
            &7u32.to_le_bytes(),
            &8u32.to_le_bytes(),
            &9u32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bin, expected);
        assert!(TokenSequence::read_binary(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn decode_image_is_identity() {
        let seq = scale_seq(&[1, 4]);
        assert_eq!(decode_image(&seq), seq);
    }
}
