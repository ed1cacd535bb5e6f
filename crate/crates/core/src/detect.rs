//! Watermark detection, multi-bit extraction and capacity analysis.
//!
//! Two detectors are provided:
//!
//! * **plain-z**: the global green ratio `z` is compared with
//!   `gamma + z_alpha * sqrt(gamma (1 - gamma) / N)`. Only meaningful for
//!   zero-bit (all-ones codeword) watermarks, since a balanced multi-bit
//!   codeword pulls `z` back towards `gamma`.
//! * **folded**: the mean over blocks of `max(r_j, 1 - r_j)`, compared with
//!   a Monte Carlo null quantile. Both all-green and all-red blocks push the
//!   statistic up, so it detects arbitrary codewords.
//!
//! `gamma` here is always the exact green probability `floor(gamma K) / K`.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asg::{replace_token, PartitionSpec, Side};
use crate::bme::{green_flags, tally_blocks, BlockTally, WatermarkLayout};
use crate::codebook::{Codebook, TokenId};
use crate::ecc::MessageCodec;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;
use crate::utri::TokenSequence;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    PlainZ,
    Folded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionStatus {
    NotWatermarked,
    /// Detected; no message was requested.
    Watermarked,
    /// Detected and the message decoded.
    Decoded,
    /// Detected but BCH decoding failed.
    Unrecoverable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub mode: DetectionMode,
    pub status: ExtractionStatus,
    pub detected: bool,
    pub tokens_observed: usize,
    pub global_green_ratio: f64,
    pub statistic: f64,
    pub threshold: f64,
    pub alpha: f64,
    /// `None` for blocks with no observed position.
    pub per_block_ratios: Vec<Option<f64>>,
    #[serde(default, with = "bit_string_opt")]
    pub decoded_message: Option<Vec<bool>>,
    pub corrected_errors: Option<usize>,
}

mod bit_string_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bits: &Option<Vec<bool>>, s: S) -> Result<S::Ok, S::Error> {
        bits.as_ref()
            .map(|b| b.iter().map(|&x| if x { '1' } else { '0' }).collect::<String>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<bool>>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| {
            s.chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(serde::de::Error::custom(format!("bad bit `{other}`"))),
                })
                .collect()
        })
        .transpose()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("alpha must lie in (0, 0.5), got {alpha}")))
    }
}

/// `gamma + z_alpha sqrt(gamma (1 - gamma) / n)`.
pub fn plain_z_threshold(gamma: f64, n: usize, alpha: f64) -> f64 {
    gamma + stats::z_alpha(alpha) * (gamma * (1.0 - gamma) / n as f64).sqrt()
}

/// Mean of `max(r, 1 - r)` over the given ratios.
pub fn folded_statistic(ratios: &[f64]) -> f64 {
    ratios.iter().map(|&r| r.max(1.0 - r)).sum::<f64>() / ratios.len() as f64
}

fn observed_ratios(tallies: &[BlockTally]) -> Vec<f64> {
    tallies.iter().filter_map(BlockTally::ratio).collect()
}

fn observed_sizes(tallies: &[BlockTally]) -> Vec<usize> {
    tallies.iter().map(|t| t.observed).filter(|&n| n > 0).collect()
}

/// One-sided z-test on the global green ratio.
pub fn zero_bit_test(seq: &TokenSequence, spec: &PartitionSpec, alpha: f64) -> Result<DetectionReport> {
    check_alpha(alpha)?;
    if seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    let flags = green_flags(seq.tokens(), seq.offset(), spec)?;
    let n = flags.len();
    let z = flags.iter().filter(|&&g| g).count() as f64 / n as f64;
    let threshold = plain_z_threshold(spec.green_fraction(), n, alpha);
    let detected = z > threshold;
    Ok(DetectionReport {
        mode: DetectionMode::PlainZ,
        status: if detected {
            ExtractionStatus::Watermarked
        } else {
            ExtractionStatus::NotWatermarked
        },
        detected,
        tokens_observed: n,
        global_green_ratio: z,
        statistic: z,
        threshold,
        alpha,
        per_block_ratios: Vec::new(),
        decoded_message: None,
        corrected_errors: None,
    })
}

/// Monte Carlo null quantile of the folded statistic for one block-size
/// profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub n_tokens: usize,
    pub n_blocks: usize,
    pub block_sizes_digest: String,
    pub gamma: f64,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Trials whose statistic exceeded `threshold`.
    pub exceedances: usize,
}

fn sizes_digest(sizes: &[usize]) -> String {
    let mut h = Sha256::new();
    for &s in sizes {
        h.update((s as u64).to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// Minimum trial count for a given `alpha`: `ceil(10 / alpha)`.
pub fn min_calibration_trials(alpha: f64) -> usize {
    (10.0 / alpha - 1e-9).ceil() as usize
}

/// Calibrates the folded statistic for the equal split of `n_tokens` into
/// `n_blocks` blocks.
pub fn calibrate_threshold(
    n_tokens: usize,
    n_blocks: usize,
    gamma: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<CalibrationRecord> {
    let layout = WatermarkLayout::partition_blocks(n_tokens, n_blocks)?;
    calibrate_block_sizes(&layout.block_sizes(), gamma, alpha, trials, seed)
}

/// Calibrates the folded statistic for an arbitrary block-size profile.
/// Under the null every position is green independently with probability
/// `gamma`.
pub fn calibrate_block_sizes(
    sizes: &[usize],
    gamma: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<CalibrationRecord> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Parameter("block sizes must be non-empty and positive".into()));
    }
    let required = min_calibration_trials(alpha);
    if trials < required {
        return Err(Error::InsufficientTrials { trials, required });
    }
    let mut stats: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream_rng(seed, "calibration", i as u64);
            let ratios: Vec<f64> = sizes
                .iter()
                .map(|&len| {
                    let green = (0..len).filter(|_| r.random::<f64>() < gamma).count();
                    BlockTally { green, observed: len }.ratio().unwrap()
                })
                .collect();
            folded_statistic(&ratios)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let allowed = (alpha * trials as f64 + 1e-9).floor() as usize;
    let threshold = stats[trials - 1 - allowed.min(trials - 1)];
    let exceedances = stats.iter().filter(|&&s| s > threshold).count();
    Ok(CalibrationRecord {
        n_tokens: sizes.iter().sum(),
        n_blocks: sizes.len(),
        block_sizes_digest: sizes_digest(sizes),
        gamma,
        alpha,
        trials,
        seed,
        threshold,
        exceedances,
    })
}

impl CalibrationRecord {
    pub fn matches(&self, sizes: &[usize], gamma: f64) -> bool {
        self.block_sizes_digest == sizes_digest(sizes) && (self.gamma - gamma).abs() < 1e-12
    }
}

/// Write-once calibration store keyed by a hash of all calibration
/// parameters, held in memory and optionally mirrored to a directory.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, CalibrationRecord>>,
}

impl CalibrationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CalibrationCache {
            dir: Some(dir),
            memory: Mutex::default(),
        })
    }

    pub fn key(sizes: &[usize], gamma: f64, alpha: f64, trials: usize, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(b"folded-calibration-v1");
        h.update(sizes_digest(sizes).as_bytes());
        h.update(gamma.to_bits().to_le_bytes());
        h.update(alpha.to_bits().to_le_bytes());
        h.update((trials as u64).to_le_bytes());
        h.update(seed.to_le_bytes());
        hex::encode(&h.finalize()[..16])
    }

    /// Returns the cached record, computing and storing it on a miss. The
    /// flag is true on a cache hit.
    pub fn get_or_calibrate(
        &self,
        sizes: &[usize],
        gamma: f64,
        alpha: f64,
        trials: usize,
        seed: u64,
    ) -> Result<(CalibrationRecord, bool)> {
        let key = Self::key(sizes, gamma, alpha, trials, seed);
        if let Some(rec) = self.memory.lock().unwrap().get(&key) {
            return Ok((rec.clone(), true));
        }
        if let Some(path) = self.path(&key) {
            if path.exists() {
                let rec: CalibrationRecord = serde_json::from_slice(&fs::read(&path)?)?;
                self.memory.lock().unwrap().insert(key, rec.clone());
                return Ok((rec, true));
            }
        }
        let rec = calibrate_block_sizes(sizes, gamma, alpha, trials, seed)?;
        if let Some(path) = self.path(&key) {
            fs::write(&path, serde_json::to_vec_pretty(&rec)?)?;
        }
        self.memory.lock().unwrap().entry(key).or_insert_with(|| rec.clone());
        Ok((rec, false))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }
}

/// Folded-statistic detection over the observed blocks of `seq`.
pub fn folded_detect(
    seq: &TokenSequence,
    layout: &WatermarkLayout,
    spec: &PartitionSpec,
    calibration: &CalibrationRecord,
) -> Result<DetectionReport> {
    if seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    let tallies = tally_blocks(seq.tokens(), seq.offset(), layout, spec)?;
    let sizes = observed_sizes(&tallies);
    if !calibration.matches(&sizes, spec.green_fraction()) {
        return Err(Error::CalibrationRequired(format!(
            "N={}, n={}, gamma={}",
            sizes.iter().sum::<usize>(),
            sizes.len(),
            spec.green_fraction()
        )));
    }
    Ok(folded_report(&tallies, calibration))
}

fn folded_report(tallies: &[BlockTally], calibration: &CalibrationRecord) -> DetectionReport {
    let ratios = observed_ratios(tallies);
    let statistic = folded_statistic(&ratios);
    let green: usize = tallies.iter().map(|t| t.green).sum();
    let observed: usize = tallies.iter().map(|t| t.observed).sum();
    let detected = statistic > calibration.threshold;
    DetectionReport {
        mode: DetectionMode::Folded,
        status: if detected {
            ExtractionStatus::Watermarked
        } else {
            ExtractionStatus::NotWatermarked
        },
        detected,
        tokens_observed: observed,
        global_green_ratio: green as f64 / observed as f64,
        statistic,
        threshold: calibration.threshold,
        alpha: calibration.alpha,
        per_block_ratios: tallies.iter().map(BlockTally::ratio).collect(),
        decoded_message: None,
        corrected_errors: None,
    }
}

/// Which detector gates extraction.
#[derive(Debug, Clone, Copy)]
pub enum Detector<'a> {
    PlainZ { alpha: f64 },
    Folded(&'a CalibrationRecord),
}

/// Raw codeword estimate: `r_j > tau` per block, unobserved blocks read as 0.
pub fn raw_codeword(tallies: &[BlockTally], tau: f64) -> Vec<bool> {
    tallies.iter().map(|t| t.ratio().is_some_and(|r| r > tau)).collect()
}

/// Detection followed, when positive, by bit decisions and BCH decoding.
pub fn extract(
    seq: &TokenSequence,
    layout: &WatermarkLayout,
    spec: &PartitionSpec,
    codec: &MessageCodec,
    tau: f64,
    detector: Detector<'_>,
) -> Result<DetectionReport> {
    if layout.n_blocks() != codec.code().n() {
        return Err(Error::Length {
            what: "layout blocks vs code length",
            expected: codec.code().n(),
            got: layout.n_blocks(),
        });
    }
    if seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    let tallies = tally_blocks(seq.tokens(), seq.offset(), layout, spec)?;
    let mut report = match detector {
        Detector::PlainZ { alpha } => {
            let mut r = zero_bit_test(seq, spec, alpha)?;
            r.per_block_ratios = tallies.iter().map(BlockTally::ratio).collect();
            r
        }
        Detector::Folded(cal) => {
            let sizes = observed_sizes(&tallies);
            if !cal.matches(&sizes, spec.green_fraction()) {
                return Err(Error::CalibrationRequired(format!(
                    "N={}, n={}",
                    sizes.iter().sum::<usize>(),
                    sizes.len()
                )));
            }
            folded_report(&tallies, cal)
        }
    };
    if !report.detected {
        return Ok(report);
    }
    match codec.decode(&raw_codeword(&tallies, tau)) {
        Ok((message, corrected)) => {
            report.status = ExtractionStatus::Decoded;
            report.decoded_message = Some(message);
            report.corrected_errors = Some(corrected);
        }
        Err(Error::DecodeFailure { .. }) => report.status = ExtractionStatus::Unrecoverable,
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Best-effort message read without a detection gate: the BCH-decoded
/// message when decoding succeeds, the uncorrected systematic bits
/// otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageEstimate {
    pub bits: Vec<bool>,
    pub decoded: bool,
    pub corrected: Option<usize>,
}

pub fn read_message(
    seq: &TokenSequence,
    layout: &WatermarkLayout,
    spec: &PartitionSpec,
    codec: &MessageCodec,
    tau: f64,
) -> Result<MessageEstimate> {
    let tallies = tally_blocks(seq.tokens(), seq.offset(), layout, spec)?;
    let raw = raw_codeword(&tallies, tau);
    Ok(match codec.decode(&raw) {
        Ok((bits, corrected)) => MessageEstimate {
            bits,
            decoded: true,
            corrected: Some(corrected),
        },
        Err(_) => MessageEstimate {
            bits: codec.raw_message(&raw),
            decoded: false,
            corrected: None,
        },
    })
}

/// Result of the capacity formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityEstimate {
    /// Minimum reliable block size `4 z^2 / delta^2`.
    pub min_block_size: f64,
    /// `floor(N / min_block_size)`.
    pub blocks: usize,
    /// `floor(blocks * code_rate)`.
    pub bits: usize,
}

pub fn capacity(n_tokens: usize, z: f64, delta: f64, code_rate: f64) -> Result<CapacityEstimate> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::Parameter(format!("delta must lie in (0, 0.5], got {delta}")));
    }
    if n_tokens == 0 {
        return Err(Error::Parameter("token count must be positive".into()));
    }
    if !(z > 0.0 && z.is_finite()) || !(code_rate > 0.0 && code_rate <= 1.0) {
        return Err(Error::Parameter("need z > 0 and code rate in (0, 1]".into()));
    }
    let min_block_size = 4.0 * z * z / (delta * delta);
    let blocks = (n_tokens as f64 / min_block_size).floor() as usize;
    let bits = (blocks as f64 * code_rate).floor() as usize;
    Ok(CapacityEstimate {
        min_block_size,
        blocks,
        bits,
    })
}

/// Bit error rate of a single 1-block of `block_len` positions when each
/// position is forced green with probability `embed_prob` and otherwise
/// holds a uniform token. An error is `r <= tau`. Returns the error count
/// over `trials` blocks.
#[allow(clippy::too_many_arguments)]
pub fn partial_embedding_errors(
    codebook: &Codebook,
    spec: &PartitionSpec,
    block_len: usize,
    embed_prob: f64,
    tau: f64,
    trials: usize,
    seed: u64,
) -> Result<usize> {
    spec.check_codebook(codebook)?;
    let k = codebook.size() as TokenId;
    let errors = (0..trials)
        .into_par_iter()
        .filter(|&trial| {
            let mut r = rng::stream_rng(seed, "partial-embedding", trial as u64);
            let base = trial * block_len;
            let green = (0..block_len)
                .filter(|&i| {
                    let p = spec.at((base + i) as u64);
                    let t = r.random_range(0..k);
                    let t = if r.random::<f64>() < embed_prob {
                        replace_token(codebook, &p, t, Side::Green)
                    } else {
                        t
                    };
                    p.is_green(t)
                })
                .count();
            green as f64 / block_len as f64 <= tau
        })
        .count();
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asg::SecretKey;
    use crate::bme::embed_sequence;
    use crate::codebook::synth_codebook;
    use crate::utri::{get_token_sequence, GeneratorConfig};

    fn spec(k: usize, b: u8) -> PartitionSpec {
        PartitionSpec::new(SecretKey::new(vec![b; 32]).unwrap(), 0.5, k).unwrap()
    }

    #[test]
    fn plain_threshold_n256_alpha_001() {
        let t = plain_z_threshold(0.5, 256, 0.01);
        assert!((t - 0.57270).abs() < 1e-4, "{t}");
        assert!((t - (0.5 + 2.3263 * (0.25f64 / 256.0).sqrt())).abs() < 1e-4);
    }

    #[test]
    fn zero_bit_clean_embedding_is_fully_green() {
        let cb = synth_codebook(1, 512, 8).unwrap();
        let s = spec(512, 1);
        let seq = get_token_sequence(&GeneratorConfig::next_token(256), &cb, 3).unwrap();
        let layout = WatermarkLayout::partition_blocks(256, 63).unwrap();
        let wm = embed_sequence(seq.tokens(), &layout, &[true; 63], &s, &cb).unwrap();
        let r = zero_bit_test(&seq.with_tokens(wm).unwrap(), &s, 0.01).unwrap();
        assert_eq!(r.global_green_ratio, 1.0);
        assert!(r.detected);
        assert_eq!(r.status, ExtractionStatus::Watermarked);
        assert_eq!(r.detected, r.statistic > r.threshold);
    }

    #[test]
    fn zero_bit_errors() {
        let s = spec(16, 1);
        let empty = TokenSequence::next_token(vec![], 16).unwrap();
        assert!(matches!(zero_bit_test(&empty, &s, 0.01), Err(Error::EmptyInput)));
        let one = TokenSequence::next_token(vec![1], 16).unwrap();
        assert!(zero_bit_test(&one, &s, 0.5).is_err());
        assert!(zero_bit_test(&one, &s, 0.0).is_err());
    }

    #[test]
    fn folded_null_mean_for_block_of_four_is_eleven_sixteenths() {
        // Exact enumeration over X ~ Binomial(4, 1/2).
        let pmf = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c: f64| c / 16.0);
        let exact: f64 = (0..=4).map(|x| pmf[x] * (x.max(4 - x) as f64 / 4.0)).sum();
        assert_eq!(exact, 11.0 / 16.0);
        // Monte Carlo through the same statistic used by detection.
        let mut r = rng::seeded(5);
        let trials = 200_000;
        let total: f64 = (0..trials)
            .map(|_| {
                let g = (0..4).filter(|_| r.random::<bool>()).count();
                folded_statistic(&[g as f64 / 4.0])
            })
            .sum();
        assert!((total / trials as f64 - exact).abs() < 0.002);
    }

    #[test]
    fn folded_statistic_is_one_for_noiseless_multibit() {
        let cb = synth_codebook(2, 1024, 8).unwrap();
        let s = spec(1024, 2);
        let seq = get_token_sequence(&GeneratorConfig::next_token(256), &cb, 1).unwrap();
        let layout = WatermarkLayout::partition_blocks(256, 63).unwrap();
        let cw: Vec<bool> = (0..63).map(|i| i % 3 == 0).collect();
        let wm = seq
            .with_tokens(embed_sequence(seq.tokens(), &layout, &cw, &s, &cb).unwrap())
            .unwrap();
        let cal = calibrate_threshold(256, 63, 0.5, 0.01, 1000, 9).unwrap();
        let r = folded_detect(&wm, &layout, &s, &cal).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.detected);
    }

    #[test]
    fn calibration_requires_enough_trials() {
        assert!(matches!(
            calibrate_threshold(256, 63, 0.5, 0.01, 999, 0),
            Err(Error::InsufficientTrials {
                trials: 999,
                required: 1000
            })
        ));
        assert_eq!(min_calibration_trials(0.001), 10_000);
    }

    #[test]
    fn calibration_at_half_is_the_null_median() {
        let cal = calibrate_threshold(256, 63, 0.5, 0.5, 4001, 3).unwrap();
        let mut r: Vec<f64> = (0..4001)
            .map(|i| {
                let mut g = rng::stream_rng(3, "calibration", i);
                let sizes = WatermarkLayout::partition_blocks(256, 63).unwrap().block_sizes();
                let ratios: Vec<f64> = sizes
                    .iter()
                    .map(|&l| (0..l).filter(|_| g.random::<f64>() < 0.5).count() as f64 / l as f64)
                    .collect();
                folded_statistic(&ratios)
            })
            .collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(cal.threshold, r[2000]);
    }

    #[test]
    fn calibration_is_reproducible_and_decreasing_in_n() {
        let a = calibrate_threshold(256, 63, 0.5, 0.01, 2000, 7).unwrap();
        let b = calibrate_threshold(256, 63, 0.5, 0.01, 2000, 7).unwrap();
        assert_eq!(a.threshold.to_bits(), b.threshold.to_bits());
        let t63 = calibrate_threshold(63, 63, 0.5, 0.01, 2000, 7).unwrap().threshold;
        let t630 = calibrate_threshold(630, 63, 0.5, 0.01, 2000, 7).unwrap().threshold;
        assert!(t63 > a.threshold && a.threshold > t630, "{t63} {} {t630}", a.threshold);
    }

    #[test]
    fn folded_detect_demands_matching_calibration() {
        let s = spec(64, 3);
        let seq = TokenSequence::next_token(vec![0; 100], 64).unwrap();
        let layout = WatermarkLayout::partition_blocks(100, 10).unwrap();
        let wrong = calibrate_threshold(100, 20, 0.5, 0.01, 1000, 1).unwrap();
        assert!(matches!(
            folded_detect(&seq, &layout, &s, &wrong),
            Err(Error::CalibrationRequired(_))
        ));
        let wrong_gamma = calibrate_threshold(100, 10, 0.3, 0.01, 1000, 1).unwrap();
        assert!(folded_detect(&seq, &layout, &s, &wrong_gamma).is_err());
    }

    #[test]
    fn cache_hits_on_second_request_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let sizes = WatermarkLayout::partition_blocks(256, 63).unwrap().block_sizes();
        let cache = CalibrationCache::on_disk(dir.path()).unwrap();
        let (a, hit_a) = cache.get_or_calibrate(&sizes, 0.5, 0.01, 1000, 4).unwrap();
        let (b, hit_b) = cache.get_or_calibrate(&sizes, 0.5, 0.01, 1000, 4).unwrap();
        assert!(!hit_a && hit_b);
        assert_eq!(a, b);
        let fresh = CalibrationCache::on_disk(dir.path()).unwrap();
        let (c, hit_c) = fresh.get_or_calibrate(&sizes, 0.5, 0.01, 1000, 4).unwrap();
        assert!(hit_c);
        assert_eq!(a, c);
        assert_eq!((c.trials, c.seed), (1000, 4));
    }

    #[test]
    fn capacity_examples() {
        let c = capacity(1000, 2.3263, 0.3, 36.0 / 63.0).unwrap();
        assert!((c.min_block_size - 4.0 * 2.3263f64.powi(2) / 0.09).abs() < 1e-9);
        assert!((c.min_block_size - 240.52).abs() < 0.01);
        assert_eq!(c.blocks, 4);
        assert_eq!(c.bits, 2);
        let c = capacity(680, 2.3263, 0.5, 0.5).unwrap();
        assert!((c.min_block_size - 86.6).abs() < 0.05);
        assert_eq!(capacity(80, 2.3263, 0.5, 1.0).unwrap().bits, 0);
        assert!(capacity(10, 2.0, 0.0, 0.5).is_err());
        assert!(capacity(10, 2.0, 0.6, 0.5).is_err());
        assert!(capacity(0, 2.0, 0.3, 0.5).is_err());
    }

    #[test]
    fn extract_roundtrip_and_gate() {
        let cb = synth_codebook(4, 1024, 8).unwrap();
        let s = spec(1024, 4);
        let codec = MessageCodec::for_message_bits(32).unwrap();
        let msg: Vec<bool> = (0..32).map(|i| (i * 7) % 5 < 2).collect();
        let payload = codec.encode(&msg).unwrap();
        let seq = get_token_sequence(&GeneratorConfig::next_token(256), &cb, 8).unwrap();
        let layout = WatermarkLayout::partition_blocks(256, 63).unwrap();
        let wm = seq
            .with_tokens(embed_sequence(seq.tokens(), &layout, &payload.codeword, &s, &cb).unwrap())
            .unwrap();
        let cal = calibrate_threshold(256, 63, 0.5, 0.01, 1000, 1).unwrap();
        let r = extract(&wm, &layout, &s, &codec, 0.5, Detector::Folded(&cal)).unwrap();
        assert_eq!(r.status, ExtractionStatus::Decoded);
        assert_eq!(r.decoded_message.as_ref(), Some(&msg));
        assert_eq!(r.corrected_errors, Some(0));
        let json = serde_json::to_string(&r).unwrap();
        let back: DetectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);

        let r = extract(&seq, &layout, &s, &codec, 0.5, Detector::Folded(&cal)).unwrap();
        assert!(!r.detected);
        assert_eq!(r.status, ExtractionStatus::NotWatermarked);
        assert!(r.decoded_message.is_none());
    }
}
