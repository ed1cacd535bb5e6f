//! Token-level corruption channel modelling distortion followed by
//! re-tokenization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, TokenId};
use crate::error::{Error, Result};
use crate::rng;
use crate::utri::{Paradigm, TokenSequence};

pub const DEFAULT_DRIFT_NEIGHBORS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChannelKind {
    /// Each token is replaced with probability `p` by a uniform entry.
    UniformFlip { p: f64 },
    /// Each token is replaced with probability `p` by one of its
    /// `neighbors` most similar entries, chosen uniformly.
    NeighborFlip {
        p: f64,
        #[serde(default = "default_neighbors")]
        neighbors: usize,
    },
    /// A contiguous run of `floor(fraction N)` tokens is replaced by
    /// uniform entries.
    SpanErase { fraction: f64 },
    /// The first `floor(fraction N)` tokens are dropped. Unless `aligned`,
    /// the survivors are re-indexed from position 0.
    PrefixCrop {
        fraction: f64,
        #[serde(default)]
        aligned: bool,
    },
    /// The `count` finest scales are replaced by uniform entries.
    ScaleDrop { count: usize },
}

fn default_neighbors() -> usize {
    DEFAULT_DRIFT_NEIGHBORS
}

impl ChannelKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ChannelKind::UniformFlip { p } => (0.0..=1.0).contains(&p),
            ChannelKind::NeighborFlip { p, neighbors } => (0.0..=1.0).contains(&p) && neighbors > 0,
            ChannelKind::SpanErase { fraction } | ChannelKind::PrefixCrop { fraction, .. } => {
                (0.0..1.0).contains(&fraction)
            }
            ChannelKind::ScaleDrop { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("channel intensity out of range: {self}")))
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            ChannelKind::UniformFlip { p } => write!(f, "uniform-flip:{p}"),
            ChannelKind::NeighborFlip { p, neighbors } => write!(f, "neighbor-flip:{p}:{neighbors}"),
            ChannelKind::SpanErase { fraction } => write!(f, "span-erase:{fraction}"),
            ChannelKind::PrefixCrop { fraction, aligned } => {
                write!(
                    f,
                    "prefix-crop:{fraction}:{}",
                    if aligned { "aligned" } else { "unaligned" }
                )
            }
            ChannelKind::ScaleDrop { count } => write!(f, "scale-drop:{count}"),
        }
    }
}

/// Parses the [`Display`](std::fmt::Display) form, e.g. `neighbor-flip:0.05`,
/// `neighbor-flip:0.05:16`, `prefix-crop:0.25:aligned` or `scale-drop:2`.
impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("cannot parse channel `{s}`"));
        let mut parts = s.trim().split(':');
        let name = parts.next().ok_or_else(bad)?;
        let args: Vec<&str> = parts.collect();
        let real = |i: usize| -> Result<f64> { args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad) };
        let count = |i: usize| -> Result<usize> { args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad) };
        let kind = match (name, args.len()) {
            ("uniform-flip", 1) => ChannelKind::UniformFlip { p: real(0)? },
            ("neighbor-flip", 1) => ChannelKind::NeighborFlip {
                p: real(0)?,
                neighbors: DEFAULT_DRIFT_NEIGHBORS,
            },
            ("neighbor-flip", 2) => ChannelKind::NeighborFlip {
                p: real(0)?,
                neighbors: count(1)?,
            },
            ("span-erase", 1) => ChannelKind::SpanErase { fraction: real(0)? },
            ("prefix-crop", 1) => ChannelKind::PrefixCrop {
                fraction: real(0)?,
                aligned: false,
            },
            ("prefix-crop", 2) => ChannelKind::PrefixCrop {
                fraction: real(0)?,
                aligned: match args[1] {
                    "aligned" => true,
                    "unaligned" => false,
                    _ => return Err(bad()),
                },
            },
            ("scale-drop", 1) => ChannelKind::ScaleDrop { count: count(0)? },
            _ => return Err(bad()),
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    #[serde(flatten)]
    pub kind: ChannelKind,
    #[serde(default)]
    pub seed: u64,
}

impl ChannelSpec {
    pub fn new(kind: ChannelKind, seed: u64) -> Self {
        ChannelSpec { kind, seed }
    }
}

/// `floor(fraction * n)`, tolerant of representation error in `fraction`.
fn fraction_of(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

pub fn apply_channel(seq: &TokenSequence, spec: &ChannelSpec, codebook: &Codebook) -> Result<TokenSequence> {
    spec.kind.validate()?;
    if codebook.size() != seq.codebook_size() {
        return Err(Error::Length {
            what: "codebook size",
            expected: seq.codebook_size(),
            got: codebook.size(),
        });
    }
    let mut rng = rng::seeded(spec.seed);
    let k = codebook.size() as TokenId;
    let n = seq.len();
    let mut out = seq.clone();
    match spec.kind {
        ChannelKind::UniformFlip { p } => {
            for t in out.tokens_mut() {
                if rng.random::<f64>() < p {
                    *t = rng.random_range(0..k);
                }
            }
        }
        ChannelKind::NeighborFlip { p, neighbors } => {
            for t in out.tokens_mut() {
                if rng.random::<f64>() < p {
                    let list = codebook.neighbors(*t as usize);
                    *t = list[rng.random_range(0..neighbors.min(list.len()))];
                }
            }
        }
        ChannelKind::SpanErase { fraction } => {
            let len = fraction_of(fraction, n);
            if len > 0 {
                let start = rng.random_range(0..=n - len);
                for t in &mut out.tokens_mut()[start..start + len] {
                    *t = rng.random_range(0..k);
                }
            }
        }
        ChannelKind::PrefixCrop { fraction, aligned } => {
            let removed = fraction_of(fraction, n);
            if removed > 0 {
                out = seq.cropped(removed, aligned);
            }
        }
        ChannelKind::ScaleDrop { count } => {
            let boundaries = match (seq.paradigm(), seq.scale_boundaries()) {
                (Paradigm::NextScale, Some(b)) => b,
                _ => return Err(Error::Paradigm("scale-drop needs a next-scale sequence".into())),
            };
            if count >= boundaries.len() {
                return Err(Error::Parameter(format!(
                    "cannot drop {count} of {} scales",
                    boundaries.len()
                )));
            }
            if count > 0 {
                let start = boundaries[boundaries.len() - count - 1];
                for t in &mut out.tokens_mut()[start..] {
                    *t = rng.random_range(0..k);
                }
            }
        }
    }
    Ok(out)
}

/// Applies `specs` in order.
pub fn apply_channels(seq: &TokenSequence, specs: &[ChannelSpec], codebook: &Codebook) -> Result<TokenSequence> {
    specs
        .iter()
        .try_fold(seq.clone(), |s, spec| apply_channel(&s, spec, codebook))
}
