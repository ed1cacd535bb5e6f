//! Command layer shared by the CLI and the experiment runner: embed,
//! extract, detect and calibrate on files, driven by an
//! [`ExperimentConfig`].

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asg::{PartitionMode, PartitionSpec, SecretKey};
use crate::bme::{embed_sequence, WatermarkLayout};
use crate::channel::{apply_channels, ChannelSpec};
use crate::codebook::Codebook;
use crate::detect::{
    extract, folded_detect, zero_bit_test, CalibrationCache, CalibrationRecord, DetectionMode, DetectionReport,
    Detector,
};
use crate::ecc::MessageCodec;
use crate::error::{Error, Result};
use crate::rng;
use crate::utri::{decode_image, get_token_sequence, layout_for, GeneratorConfig, Paradigm, TokenSequence};

pub use config::{CodebookSource, ExperimentConfig, CONFIG_VERSION};
pub use experiments::{cmd_experiment, ExperimentOutputs};

/// A loaded config with its codebook and calibration cache.
#[derive(Debug)]
pub struct Session {
    pub config: ExperimentConfig,
    pub codebook: Codebook,
    pub cache: CalibrationCache,
}

impl Session {
    /// Loads the codebook and opens the on-disk calibration cache.
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        let cache = CalibrationCache::on_disk(config.cache_dir())?;
        Self::with_cache(config, cache)
    }

    /// Like [`Session::open`] with a memory-only cache.
    pub fn in_memory(config: ExperimentConfig) -> Result<Self> {
        Self::with_cache(config, CalibrationCache::in_memory())
    }

    fn with_cache(config: ExperimentConfig, cache: CalibrationCache) -> Result<Self> {
        config.validate()?;
        let codebook = config.codebook.load()?;
        Ok(Session {
            config,
            codebook,
            cache,
        })
    }

    pub fn partition(&self, key: SecretKey) -> Result<PartitionSpec> {
        self.partition_with_mode(key, self.config.mode)
    }

    pub(crate) fn partition_with_mode(&self, key: SecretKey, mode: PartitionMode) -> Result<PartitionSpec> {
        PartitionSpec::with_mode(key, self.config.gamma, self.codebook.size(), mode)
    }

    /// Seed of every calibration run, fixed by the master seed.
    pub fn calibration_seed(&self) -> u64 {
        rng::trial_seed(self.config.master_seed, "calibration", 0)
    }

    /// Folded-statistic calibration for a block-size profile at `alpha`.
    pub fn calibration(&self, sizes: &[usize], effective_gamma: f64, alpha: f64) -> Result<(CalibrationRecord, bool)> {
        self.cache.get_or_calibrate(
            sizes,
            effective_gamma,
            alpha,
            self.config.calibration_trials,
            self.calibration_seed(),
        )
    }
}

/// Layout of the sequences `generator` produces.
pub fn generator_layout(generator: &GeneratorConfig, n_blocks: usize) -> Result<WatermarkLayout> {
    layout_for(&shape_of(generator)?, n_blocks)
}

/// An all-zero sequence with the generator's shape.
pub(crate) fn shape_of(generator: &GeneratorConfig) -> Result<TokenSequence> {
    let n = generator.sequence_len();
    match generator.paradigm {
        Paradigm::NextToken => TokenSequence::next_token(vec![0; n], 1),
        Paradigm::NextScale => {
            let boundaries = generator
                .scales
                .iter()
                .flatten()
                .scan(0, |acc, &s| {
                    *acc += s;
                    Some(*acc)
                })
                .collect();
            TokenSequence::next_scale(vec![0; n], boundaries, 1)
        }
    }
}

/// Parses a `0`/`1` string.
pub fn parse_bits(text: &str) -> Result<Vec<bool>> {
    text.trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Format(format!(
                "message must be a string of 0s and 1s, found `{c}`"
            ))),
        })
        .collect()
}

pub fn format_bits(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Provenance record written next to every embedded sequence. Holds
/// everything needed to extract except the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub tool_version: String,
    pub codebook: String,
    pub codebook_size: usize,
    pub gamma: f64,
    pub effective_gamma: f64,
    pub mode: PartitionMode,
    pub message_bits: usize,
    pub code: CodeInfo,
    pub paradigm: Paradigm,
    pub n_tokens: usize,
    pub layout: WatermarkLayout,
    pub tau: f64,
    pub detection: DetectionMode,
    pub alpha: f64,
    pub calibration_trials: usize,
    pub master_seed: u64,
    /// Generator seed, absent when an existing sequence was watermarked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeInfo {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub t: usize,
}

const SIDECAR_FORMAT: &str = "tokenmark-sidecar-v1";

/// `<sequence>.json`, the default sidecar location.
pub fn sidecar_path(sequence: &Path) -> PathBuf {
    let mut name = sequence.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

impl Sidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(path)?)?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(Error::Format(format!("unknown sidecar format `{}`", sidecar.format)));
        }
        Ok(sidecar)
    }
}

pub struct EmbedRequest<'a> {
    pub message: &'a [bool],
    /// Watermark this sequence instead of generating one.
    pub input: Option<&'a Path>,
    /// Generator seed (the stand-in for the prompt).
    pub seed: u64,
    pub output: &'a Path,
}

#[derive(Debug)]
pub struct EmbedOutcome {
    pub sequence: TokenSequence,
    pub sidecar: Sidecar,
    pub sidecar_path: PathBuf,
}

/// Generates (or loads) a sequence, embeds `message`, writes the sequence
/// and its sidecar.
pub fn cmd_embed(session: &Session, key: &SecretKey, request: &EmbedRequest<'_>) -> Result<EmbedOutcome> {
    let config = &session.config;
    if request.message.len() != config.message_bits {
        return Err(Error::config(
            "message_bits",
            format!(
                "message has {} bits but the config expects {}",
                request.message.len(),
                config.message_bits
            ),
        ));
    }
    let codec = MessageCodec::for_message_bits(config.message_bits)?;
    let spec = session.partition(key.clone())?;
    let source = match request.input {
        Some(path) => TokenSequence::load(path)?,
        None => get_token_sequence(&config.generator, &session.codebook, request.seed)?,
    };
    if source.codebook_size() != session.codebook.size() {
        return Err(Error::Length {
            what: "sequence codebook size",
            expected: session.codebook.size(),
            got: source.codebook_size(),
        });
    }
    let layout = layout_for(&source, codec.code().n())?;
    let payload = codec.encode(request.message)?;
    let tokens = embed_sequence(source.tokens(), &layout, &payload.codeword, &spec, &session.codebook)?;
    let sequence = decode_image(&source.with_tokens(tokens)?);
    sequence.save(request.output)?;

    let code = codec.code();
    let sidecar = Sidecar {
        format: SIDECAR_FORMAT.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        codebook: config.codebook.describe(),
        codebook_size: session.codebook.size(),
        gamma: config.gamma,
        effective_gamma: spec.green_fraction(),
        mode: config.mode,
        message_bits: config.message_bits,
        code: CodeInfo {
            n: code.n(),
            k: code.k(),
            d: code.d(),
            t: code.t(),
        },
        paradigm: sequence.paradigm(),
        n_tokens: sequence.len(),
        layout,
        tau: config.tau,
        detection: config.detection,
        alpha: config.alpha,
        calibration_trials: config.calibration_trials,
        master_seed: config.master_seed,
        generator_seed: request.input.is_none().then_some(request.seed),
        input: request.input.map(|p| p.display().to_string()),
    };
    let sidecar_path = sidecar_path(request.output);
    fs::write(&sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(EmbedOutcome {
        sequence,
        sidecar,
        sidecar_path,
    })
}

/// What extraction needs besides the key: from the sidecar when there is
/// one, from the config otherwise.
struct ExtractionPlan {
    spec: PartitionSpec,
    codec: MessageCodec,
    layout: WatermarkLayout,
    tau: f64,
}

fn plan(session: &Session, key: &SecretKey, seq: &TokenSequence, sidecar: Option<&Sidecar>) -> Result<ExtractionPlan> {
    let config = &session.config;
    match sidecar {
        Some(s) => {
            if s.codebook_size != session.codebook.size() {
                return Err(Error::Length {
                    what: "sidecar codebook size",
                    expected: session.codebook.size(),
                    got: s.codebook_size,
                });
            }
            let spec = PartitionSpec::with_mode(key.clone(), s.gamma, s.codebook_size, s.mode)?;
            let codec = MessageCodec::for_message_bits(s.message_bits)?;
            Ok(ExtractionPlan {
                spec,
                codec,
                layout: s.layout.clone(),
                tau: s.tau,
            })
        }
        None => {
            let codec = MessageCodec::for_message_bits(config.message_bits)?;
            Ok(ExtractionPlan {
                spec: session.partition(key.clone())?,
                layout: layout_for(seq, codec.code().n())?,
                codec,
                tau: config.tau,
            })
        }
    }
}

/// Input of [`cmd_extract`] and [`cmd_detect`].
#[derive(Debug, Clone, Copy)]
pub struct ExtractRequest<'a> {
    pub sequence: &'a Path,
    /// Defaults to `<sequence>.json` when that file exists.
    pub sidecar: Option<&'a Path>,
    /// Treat a sequence shorter than the layout as its tail: the survivors
    /// of a prefix crop, placed back at their original positions.
    pub assume_aligned: bool,
}

fn load_for_extraction(request: &ExtractRequest<'_>) -> Result<(TokenSequence, Option<Sidecar>)> {
    let (sequence, sidecar) = (request.sequence, request.sidecar);
    let seq = TokenSequence::load(sequence)?;
    let sidecar = match sidecar {
        Some(p) => Some(Sidecar::load(p)?),
        None => {
            let default = sidecar_path(sequence);
            if default.exists() {
                Some(Sidecar::load(default)?)
            } else {
                None
            }
        }
    };
    Ok((seq, sidecar))
}

fn observed_profile(layout: &WatermarkLayout, seq: &TokenSequence) -> Vec<usize> {
    layout
        .observed_block_sizes(seq.offset(), seq.len())
        .into_iter()
        .filter(|&n| n > 0)
        .collect()
}

fn realigned(seq: TokenSequence, n_tokens: usize, assume_aligned: bool) -> TokenSequence {
    if assume_aligned && seq.offset() == 0 && seq.len() < n_tokens {
        seq.with_offset(n_tokens - seq.len())
    } else {
        seq
    }
}

/// Detection then message decoding.
pub fn cmd_extract(session: &Session, key: &SecretKey, request: &ExtractRequest<'_>) -> Result<DetectionReport> {
    let (seq, sidecar) = load_for_extraction(request)?;
    let p = plan(session, key, &seq, sidecar.as_ref())?;
    let seq = realigned(seq, p.layout.n_tokens(), request.assume_aligned);
    extract_planned(session, &seq, &p)
}

pub fn extract_sequence(
    session: &Session,
    key: &SecretKey,
    seq: &TokenSequence,
    sidecar: Option<&Sidecar>,
) -> Result<DetectionReport> {
    extract_planned(session, seq, &plan(session, key, seq, sidecar)?)
}

fn extract_planned(session: &Session, seq: &TokenSequence, p: &ExtractionPlan) -> Result<DetectionReport> {
    let alpha = session.config.alpha;
    match session.config.detection {
        DetectionMode::PlainZ => extract(seq, &p.layout, &p.spec, &p.codec, p.tau, Detector::PlainZ { alpha }),
        DetectionMode::Folded => {
            let (cal, _) = session.calibration(&observed_profile(&p.layout, seq), p.spec.green_fraction(), alpha)?;
            extract(seq, &p.layout, &p.spec, &p.codec, p.tau, Detector::Folded(&cal))
        }
    }
}

/// Detection only, no message decoding.
pub fn cmd_detect(session: &Session, key: &SecretKey, request: &ExtractRequest<'_>) -> Result<DetectionReport> {
    let (seq, sidecar) = load_for_extraction(request)?;
    let p = plan(session, key, &seq, sidecar.as_ref())?;
    let seq = realigned(seq, p.layout.n_tokens(), request.assume_aligned);
    let alpha = session.config.alpha;
    match session.config.detection {
        DetectionMode::PlainZ => zero_bit_test(&seq, &p.spec, alpha),
        DetectionMode::Folded => {
            let (cal, _) = session.calibration(&observed_profile(&p.layout, &seq), p.spec.green_fraction(), alpha)?;
            folded_detect(&seq, &p.layout, &p.spec, &cal)
        }
    }
}

/// One calibration produced or found by [`cmd_calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationEntry {
    pub generator: String,
    pub message_bits: usize,
    pub record: CalibrationRecord,
    pub cache_hit: bool,
}

/// Calibrates every (layout, alpha) pair the config can use: the main
/// generator and message length, the bit-accuracy grid, and the FPR
/// experiment's alphas. Cached entries are reused.
pub fn cmd_calibrate(session: &Session) -> Result<Vec<CalibrationEntry>> {
    let config = &session.config;
    let gamma = session.partition(SecretKey::new(vec![0; 16])?)?.green_fraction();
    let mut alphas = vec![config.alpha];
    if let Some(fpr) = config.experiments.fpr.as_ref().filter(|f| f.folded) {
        alphas.extend(&fpr.alphas);
    }
    let mut cells = vec![(config.generator.clone(), config.message_bits)];
    if let Some(b) = &config.experiments.bit_accuracy {
        for g in &b.generators {
            cells.extend(b.message_bits.iter().map(|&bits| (g.clone(), bits)));
        }
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (generator, bits) in cells {
        let codec = MessageCodec::for_message_bits(bits)?;
        let sizes = generator_layout(&generator, codec.code().n())?.block_sizes();
        for &alpha in &alphas {
            if !seen.insert(CalibrationCache::key(
                &sizes,
                gamma,
                alpha,
                config.calibration_trials,
                session.calibration_seed(),
            )) {
                continue;
            }
            let (record, cache_hit) = session.calibration(&sizes, gamma, alpha)?;
            out.push(CalibrationEntry {
                generator: describe_generator(&generator),
                message_bits: bits,
                record,
                cache_hit,
            });
        }
    }
    Ok(out)
}

pub(crate) fn describe_generator(g: &GeneratorConfig) -> String {
    let name = match g.paradigm {
        Paradigm::NextToken => "next-token",
        Paradigm::NextScale => "next-scale",
    };
    format!("{name}:{}", g.sequence_len())
}

/// Applies `channels` in order to a sequence file.
pub fn cmd_attack(session: &Session, channels: &[ChannelSpec], input: &Path, output: &Path) -> Result<TokenSequence> {
    let seq = TokenSequence::load(input)?;
    let out = apply_channels(&seq, channels, &session.codebook)?;
    out.save(output)?;
    Ok(out)
}
