//! The experiment runner behind `cmd_experiment`.
//!
//! Each experiment cell derives one RNG stream per trial from
//! `(master_seed, cell tag, trial index)`, runs trials in parallel and
//! collects rows in trial order, so the CSV bytes do not depend on the
//! number of worker threads. Every trial row carries its trial seed and
//! the channel chain it went through.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use super::config::{
    BitAccuracyExperiment, ForgeryExperiment, FprExperiment, HistogramExperiment, RobustnessExperiment,
};
use super::{describe_generator, Session};
use crate::asg::{replace_token, PartitionMode, PartitionSpec, SecretKey, Side};
use crate::bme::{embed_sequence, green_flags, tally_blocks, WatermarkLayout};
use crate::channel::{apply_channels, ChannelKind, ChannelSpec};
use crate::detect::{
    extract, folded_statistic, plain_z_threshold, read_message, zero_bit_test, CalibrationRecord, DetectionMode,
    Detector, ExtractionStatus,
};
use crate::ecc::MessageCodec;
use crate::error::Result;
use crate::rng;
use crate::stats::{binomial_acceptance_region, mean, std_dev, wilson_interval, Z_95};
use crate::utri::{get_token_sequence, layout_for, GeneratorConfig, TokenSequence};

/// Files written by one `cmd_experiment` run, in write order.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutputs {
    pub files: Vec<PathBuf>,
}

/// Runs every experiment present in the config and writes its CSV tables
/// into `output_dir`.
pub fn cmd_experiment(session: &Session) -> Result<ExperimentOutputs> {
    let config = &session.config;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut out = ExperimentOutputs::default();
    let ex = &config.experiments;
    if let Some(e) = &ex.fpr {
        let r = run_fpr(session, e)?;
        out.write(dir, "fpr_trials.csv", &r.trials)?;
        out.write(dir, "fpr.csv", &r.summary)?;
    }
    if let Some(e) = &ex.bit_accuracy {
        let r = run_bit_accuracy(session, e)?;
        out.write(dir, "bit_accuracy_trials.csv", &r.trials)?;
        out.write(dir, "bit_accuracy.csv", &r.summary)?;
    }
    if let Some(e) = &ex.robustness {
        let r = run_robustness(session, e)?;
        out.write(dir, "robustness_trials.csv", &r.trials)?;
        out.write(dir, "robustness.csv", &r.summary)?;
    }
    if let Some(e) = &ex.histograms {
        let r = run_histograms(session, e)?;
        out.write(dir, "histograms_trials.csv", &r.trials)?;
        out.write(dir, "histograms.csv", &r.bins)?;
        out.write(dir, "histograms_summary.csv", &r.summary)?;
    }
    if let Some(e) = &ex.forgery {
        let r = run_forgery(session, e)?;
        out.write(dir, "forgery_trials.csv", &r.trials)?;
        out.write(dir, "forgery.csv", &r.summary)?;
    }
    Ok(out)
}

impl ExperimentOutputs {
    fn write<T: Serialize>(&mut self, dir: &Path, name: &str, rows: &[T]) -> Result<()> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
        for row in rows {
            w.serialize(row).map_err(csv_error)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}

/// Tallies a binary outcome with its Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

impl Rate {
    pub fn of(flags: impl IntoIterator<Item = bool>) -> Rate {
        let (mut successes, mut trials) = (0, 0);
        for f in flags {
            trials += 1;
            successes += f as usize;
        }
        let (wilson_lo, wilson_hi) = wilson_interval(successes, trials, Z_95);
        Rate {
            successes,
            trials,
            rate: if trials == 0 {
                f64::NAN
            } else {
                successes as f64 / trials as f64
            },
            wilson_lo,
            wilson_hi,
        }
    }
}

fn trial_seeds(master: u64, tag: &str, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| rng::trial_seed(master, tag, i)).collect()
}

fn random_key(seed: u64, tag: &str) -> SecretKey {
    let mut bytes = [0u8; 32];
    rng::stream_rng(seed, tag, 0).fill_bytes(&mut bytes);
    SecretKey::new(bytes.to_vec()).expect("32-byte key")
}

fn random_bits(seed: u64, tag: &str, len: usize) -> Vec<bool> {
    let mut r = rng::stream_rng(seed, tag, 0);
    (0..len).map(|_| r.random::<bool>()).collect()
}

impl Session {
    fn trial_key(&self, seed: u64) -> Result<SecretKey> {
        Ok(match self.config.fixed_key()? {
            Some(k) => k,
            None => random_key(seed, "key"),
        })
    }

    fn effective_gamma(&self) -> Result<f64> {
        Ok(self.partition(SecretKey::new(vec![0; 16])?)?.green_fraction())
    }

    /// Detector for every trial of a cell. Channels only change which
    /// positions are observed through crops, which are deterministic, so
    /// one calibration covers the cell.
    fn cell_detector(
        &self,
        layout: &WatermarkLayout,
        shape: &TokenSequence,
        channels: &[ChannelSpec],
    ) -> Result<CellDetector> {
        Ok(match self.config.detection {
            DetectionMode::PlainZ => CellDetector::PlainZ(self.config.alpha),
            DetectionMode::Folded => {
                let probe = apply_channels(shape, channels, &self.codebook)?;
                let sizes: Vec<usize> = layout
                    .observed_block_sizes(probe.offset(), probe.len())
                    .into_iter()
                    .filter(|&n| n > 0)
                    .collect();
                CellDetector::Folded(self.calibration(&sizes, self.effective_gamma()?, self.config.alpha)?.0)
            }
        })
    }

    fn shape(&self, generator: &GeneratorConfig) -> Result<TokenSequence> {
        let s = super::shape_of(generator)?;
        s.with_codebook_size(self.codebook.size())
    }
}

enum CellDetector {
    PlainZ(f64),
    Folded(CalibrationRecord),
}

impl CellDetector {
    fn detector(&self) -> Detector<'_> {
        match self {
            CellDetector::PlainZ(alpha) => Detector::PlainZ { alpha: *alpha },
            CellDetector::Folded(rec) => Detector::Folded(rec),
        }
    }
}

/// Channel chain of one trial: the configured seeds are mixed with the
/// trial seed so every trial sees fresh corruption.
fn trial_channels(base: &[ChannelSpec], extra: Option<&ChannelKind>, trial_seed: u64) -> Vec<ChannelSpec> {
    base.iter()
        .cloned()
        .chain(extra.map(|k| ChannelSpec::new(k.clone(), 0)))
        .enumerate()
        .map(|(j, c)| ChannelSpec::new(c.kind, rng::trial_seed(trial_seed ^ c.seed, "channel", j as u64)))
        .collect()
}

fn channel_label(base: &[ChannelSpec], extra: Option<&ChannelKind>) -> String {
    let parts: Vec<String> = base
        .iter()
        .map(|c| c.kind.to_string())
        .chain(extra.map(ToString::to_string))
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("+")
    }
}

struct Watermarked {
    original: TokenSequence,
    marked: TokenSequence,
    message: Vec<bool>,
    codeword: Vec<bool>,
}

fn watermark(
    session: &Session,
    generator: &GeneratorConfig,
    layout: &WatermarkLayout,
    codec: &MessageCodec,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Watermarked> {
    let original = get_token_sequence(generator, &session.codebook, rng::trial_seed(seed, "generator", 0))?;
    let message = random_bits(seed, "message", codec.message_bits());
    let payload = codec.encode(&message)?;
    let tokens = embed_sequence(original.tokens(), layout, &payload.codeword, spec, &session.codebook)?;
    Ok(Watermarked {
        marked: original.with_tokens(tokens)?,
        original,
        message,
        codeword: payload.codeword,
    })
}

fn bit_accuracy(a: &[bool], b: &[bool]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

fn global_ratio(seq: &TokenSequence, spec: &PartitionSpec) -> Result<f64> {
    let flags = green_flags(seq.tokens(), seq.offset(), spec)?;
    Ok(flags.iter().filter(|&&g| g).count() as f64 / flags.len() as f64)
}

// (a) ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FprTrialRow {
    pub detector: DetectionMode,
    pub alpha: f64,
    pub trial: usize,
    pub trial_seed: u64,
    pub channel: String,
    pub statistic: f64,
    pub threshold: f64,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FprSummaryRow {
    pub detector: DetectionMode,
    pub alpha: f64,
    pub n_tokens: usize,
    pub fpr: Rate,
    /// Exact 99% binomial acceptance region for the false-positive count,
    /// as rates.
    pub exact99_lo: f64,
    pub exact99_hi: f64,
    pub within_exact99: bool,
}

// csv cannot write `#[serde(flatten)]` (it becomes a map), so rows holding
// a `Rate` spell their columns out.
fn rate_fields<S: SerializeStruct>(s: &mut S, r: &Rate) -> std::result::Result<(), S::Error> {
    s.serialize_field("successes", &r.successes)?;
    s.serialize_field("trials", &r.trials)?;
    s.serialize_field("rate", &r.rate)?;
    s.serialize_field("wilson_lo", &r.wilson_lo)?;
    s.serialize_field("wilson_hi", &r.wilson_hi)
}

impl Serialize for FprSummaryRow {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("FprSummaryRow", 11)?;
        s.serialize_field("detector", &self.detector)?;
        s.serialize_field("alpha", &self.alpha)?;
        s.serialize_field("n_tokens", &self.n_tokens)?;
        rate_fields(&mut s, &self.fpr)?;
        s.serialize_field("exact99_lo", &self.exact99_lo)?;
        s.serialize_field("exact99_hi", &self.exact99_hi)?;
        s.serialize_field("within_exact99", &self.within_exact99)?;
        s.end()
    }
}

pub struct FprResults {
    pub trials: Vec<FprTrialRow>,
    pub summary: Vec<FprSummaryRow>,
}

/// Unwatermarked sequences under a fresh key per trial, tested by the
/// plain z-test and (optionally) the folded detector at every alpha.
pub fn run_fpr(session: &Session, exp: &FprExperiment) -> Result<FprResults> {
    let config = &session.config;
    let count = exp.trials.unwrap_or(config.trials);
    let codec = MessageCodec::for_message_bits(config.message_bits)?;
    let layout = layout_for(&session.shape(&config.generator)?, codec.code().n())?;
    let gamma = session.effective_gamma()?;
    let n = config.generator.sequence_len();
    let folded: Vec<(f64, CalibrationRecord)> = if exp.folded {
        exp.alphas
            .iter()
            .map(|&a| Ok((a, session.calibration(&layout.block_sizes(), gamma, a)?.0)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let seeds = trial_seeds(config.master_seed, "fpr", count);
    let per_trial: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let seq = get_token_sequence(
                &config.generator,
                &session.codebook,
                rng::trial_seed(seed, "generator", 0),
            )?;
            let spec = session.partition(session.trial_key(seed)?)?;
            let tallies = tally_blocks(seq.tokens(), 0, &layout, &spec)?;
            let green: usize = tallies.iter().map(|t| t.green).sum();
            let ratios: Vec<f64> = tallies.iter().filter_map(|t| t.ratio()).collect();
            Ok((green as f64 / n as f64, folded_statistic(&ratios)))
        })
        .collect::<Result<_>>()?;

    let mut trials = Vec::new();
    let mut summary = Vec::new();
    let mut push = |detector, alpha: f64, threshold: f64, stat: &dyn Fn(&(f64, f64)) -> f64| {
        let first = trials.len();
        for (i, (seed, s)) in seeds.iter().zip(&per_trial).enumerate() {
            let statistic = stat(s);
            trials.push(FprTrialRow {
                detector,
                alpha,
                trial: i,
                trial_seed: *seed,
                channel: "none".into(),
                statistic,
                threshold,
                detected: statistic > threshold,
            });
        }
        let fpr = Rate::of(trials[first..].iter().map(|r| r.detected));
        let (lo, hi) = binomial_acceptance_region(count, alpha, 0.99);
        summary.push(FprSummaryRow {
            detector,
            alpha,
            n_tokens: n,
            fpr,
            exact99_lo: lo as f64 / count as f64,
            exact99_hi: hi as f64 / count as f64,
            within_exact99: (lo..=hi).contains(&fpr.successes),
        });
    };
    for &alpha in &exp.alphas {
        push(DetectionMode::PlainZ, alpha, plain_z_threshold(gamma, n, alpha), &|s| {
            s.0
        });
    }
    for (alpha, rec) in &folded {
        push(DetectionMode::Folded, *alpha, rec.threshold, &|s| s.1);
    }
    Ok(FprResults { trials, summary })
}

// (b) ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyTrialRow {
    pub generator: String,
    pub message_bits: usize,
    pub trial: usize,
    pub trial_seed: u64,
    pub channel: String,
    pub detected: bool,
    pub status: ExtractionStatus,
    /// Matching message bits of the best-effort read (BCH decode when it
    /// succeeds, systematic bits otherwise), independent of detection.
    pub bit_accuracy: f64,
    /// Detection positive and the decoded message equals the embedded one.
    pub exact: bool,
    pub corrected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySummaryRow {
    pub generator: String,
    pub message_bits: usize,
    pub code: String,
    pub channel: String,
    pub trials: usize,
    pub bit_accuracy: f64,
    pub bit_accuracy_std: f64,
    pub exact_rate: f64,
    pub exact_wilson_lo: f64,
    pub exact_wilson_hi: f64,
    pub tpr: f64,
    pub tpr_wilson_lo: f64,
    pub tpr_wilson_hi: f64,
    pub mean_corrected: f64,
}

pub struct AccuracyResults {
    pub trials: Vec<AccuracyTrialRow>,
    pub summary: Vec<AccuracySummaryRow>,
}

/// Embeds random messages, passes them through `extra` after the base
/// channels and extracts. One cell of experiments (b) and (c).
fn accuracy_cell(
    session: &Session,
    generator: &GeneratorConfig,
    message_bits: usize,
    extra: Option<&ChannelKind>,
    tag: &str,
    count: usize,
) -> Result<(Vec<AccuracyTrialRow>, AccuracySummaryRow)> {
    let config = &session.config;
    let codec = MessageCodec::for_message_bits(message_bits)?;
    let shape = session.shape(generator)?;
    let layout = layout_for(&shape, codec.code().n())?;
    let label = channel_label(&config.channels, extra);
    let detector = session.cell_detector(&layout, &shape, &trial_channels(&config.channels, extra, 0))?;
    let gen_name = describe_generator(generator);

    let seeds = trial_seeds(config.master_seed, tag, count);
    let rows: Vec<AccuracyTrialRow> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let spec = session.partition(session.trial_key(seed)?)?;
            let w = watermark(session, generator, &layout, &codec, &spec, seed)?;
            let received = apply_channels(
                &w.marked,
                &trial_channels(&config.channels, extra, seed),
                &session.codebook,
            )?;
            let report = extract(&received, &layout, &spec, &codec, config.tau, detector.detector())?;
            let estimate = read_message(&received, &layout, &spec, &codec, config.tau)?;
            Ok(AccuracyTrialRow {
                generator: gen_name.clone(),
                message_bits,
                trial: i,
                trial_seed: seed,
                channel: label.clone(),
                detected: report.detected,
                status: report.status,
                bit_accuracy: bit_accuracy(&estimate.bits, &w.message),
                exact: report.decoded_message.as_deref() == Some(&w.message[..]),
                corrected: report.corrected_errors,
            })
        })
        .collect::<Result<_>>()?;

    let acc: Vec<f64> = rows.iter().map(|r| r.bit_accuracy).collect();
    let exact = Rate::of(rows.iter().map(|r| r.exact));
    let tpr = Rate::of(rows.iter().map(|r| r.detected));
    let corrected: Vec<f64> = rows.iter().filter_map(|r| r.corrected.map(|c| c as f64)).collect();
    let code = codec.code();
    let summary = AccuracySummaryRow {
        generator: gen_name,
        message_bits,
        code: format!("BCH({},{},{})", code.n(), code.k(), code.d()),
        channel: label,
        trials: count,
        bit_accuracy: mean(&acc),
        bit_accuracy_std: std_dev(&acc),
        exact_rate: exact.rate,
        exact_wilson_lo: exact.wilson_lo,
        exact_wilson_hi: exact.wilson_hi,
        tpr: tpr.rate,
        tpr_wilson_lo: tpr.wilson_lo,
        tpr_wilson_hi: tpr.wilson_hi,
        mean_corrected: if corrected.is_empty() {
            f64::NAN
        } else {
            mean(&corrected)
        },
    };
    Ok((rows, summary))
}

pub fn run_bit_accuracy(session: &Session, exp: &BitAccuracyExperiment) -> Result<AccuracyResults> {
    let count = exp.trials.unwrap_or(session.config.trials);
    let mut out = AccuracyResults {
        trials: Vec::new(),
        summary: Vec::new(),
    };
    for (g, generator) in exp.generators.iter().enumerate() {
        for &bits in &exp.message_bits {
            let tag = format!("bit-accuracy/{g}/{bits}");
            let (rows, summary) = accuracy_cell(session, generator, bits, None, &tag, count)?;
            out.trials.extend(rows);
            out.summary.push(summary);
        }
    }
    Ok(out)
}

// (c) ---------------------------------------------------------------------

pub fn run_robustness(session: &Session, exp: &RobustnessExperiment) -> Result<AccuracyResults> {
    let config = &session.config;
    let count = exp.trials.unwrap_or(config.trials);
    let mut out = AccuracyResults {
        trials: Vec::new(),
        summary: Vec::new(),
    };
    for (k, kind) in exp.sweep.iter().enumerate() {
        let tag = format!("robustness/{k}");
        let (rows, summary) = accuracy_cell(session, &config.generator, config.message_bits, Some(kind), &tag, count)?;
        out.trials.extend(rows);
        out.summary.push(summary);
    }
    Ok(out)
}

// (d) ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramTrialRow {
    pub trial: usize,
    pub trial_seed: u64,
    pub channel: String,
    /// Watermarked sequence, verifying key.
    pub correct_key: f64,
    /// Watermarked sequence, an unrelated key.
    pub wrong_key: f64,
    /// The generator's sequence before embedding, verifying key.
    pub unwatermarked: f64,
    /// Fraction of positions whose block carries a 1 bit.
    pub codeword_one_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBinRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub correct_key: usize,
    pub wrong_key: usize,
    pub unwatermarked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramSummaryRow {
    pub condition: String,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
}

pub struct HistogramResults {
    pub trials: Vec<HistogramTrialRow>,
    pub bins: Vec<HistogramBinRow>,
    pub summary: Vec<HistogramSummaryRow>,
}

/// Global green ratios under the correct key, a wrong key and no
/// watermark. The base channels apply to the watermarked sequence.
pub fn run_histograms(session: &Session, exp: &HistogramExperiment) -> Result<HistogramResults> {
    let config = &session.config;
    let count = exp.trials.unwrap_or(config.trials);
    let codec = MessageCodec::for_message_bits(config.message_bits)?;
    let layout = layout_for(&session.shape(&config.generator)?, codec.code().n())?;
    let label = channel_label(&config.channels, None);
    let seeds = trial_seeds(config.master_seed, "histograms", count);
    let trials: Vec<HistogramTrialRow> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let spec = session.partition(session.trial_key(seed)?)?;
            let wrong = session.partition(random_key(seed, "wrong-key"))?;
            let w = watermark(session, &config.generator, &layout, &codec, &spec, seed)?;
            let received = apply_channels(
                &w.marked,
                &trial_channels(&config.channels, None, seed),
                &session.codebook,
            )?;
            let ones: usize = layout
                .blocks()
                .iter()
                .zip(&w.codeword)
                .filter(|(_, &b)| b)
                .map(|(r, _)| r.len())
                .sum();
            Ok(HistogramTrialRow {
                trial: i,
                trial_seed: seed,
                channel: label.clone(),
                correct_key: global_ratio(&received, &spec)?,
                wrong_key: global_ratio(&received, &wrong)?,
                unwatermarked: global_ratio(&w.original, &spec)?,
                codeword_one_fraction: ones as f64 / layout.n_tokens() as f64,
            })
        })
        .collect::<Result<_>>()?;

    let bins_n = exp.bins;
    let bin_of = |r: f64| ((r * bins_n as f64).floor() as usize).min(bins_n - 1);
    let mut bins: Vec<HistogramBinRow> = (0..bins_n)
        .map(|b| HistogramBinRow {
            bin_lo: b as f64 / bins_n as f64,
            bin_hi: (b + 1) as f64 / bins_n as f64,
            correct_key: 0,
            wrong_key: 0,
            unwatermarked: 0,
        })
        .collect();
    for t in &trials {
        bins[bin_of(t.correct_key)].correct_key += 1;
        bins[bin_of(t.wrong_key)].wrong_key += 1;
        bins[bin_of(t.unwatermarked)].unwatermarked += 1;
    }
    let column = |f: fn(&HistogramTrialRow) -> f64| trials.iter().map(f).collect::<Vec<_>>();
    let summary = [
        ("correct-key", column(|t| t.correct_key)),
        ("wrong-key", column(|t| t.wrong_key)),
        ("unwatermarked", column(|t| t.unwatermarked)),
        ("codeword-one-fraction", column(|t| t.codeword_one_fraction)),
    ]
    .into_iter()
    .map(|(name, xs)| HistogramSummaryRow {
        condition: name.into(),
        trials: xs.len(),
        mean: mean(&xs),
        std: std_dev(&xs),
    })
    .collect();
    Ok(HistogramResults { trials, bins, summary })
}

// (e) ---------------------------------------------------------------------

/// What the forger is trying to achieve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adversary {
    /// Forces every controllable position green; succeeds when the
    /// detector fires.
    ForceGreen,
    /// Forces every controllable position to the side its block needs for
    /// a chosen target message; succeeds when extraction decodes exactly
    /// that message.
    ForgeMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForgeryTrialRow {
    pub mode: PartitionMode,
    pub adversary: Adversary,
    pub exposure: f64,
    pub trial: usize,
    pub trial_seed: u64,
    pub channel: String,
    pub exposed_positions: usize,
    pub controlled_positions: usize,
    pub detected: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgerySummaryRow {
    pub mode: PartitionMode,
    pub adversary: Adversary,
    pub exposure: f64,
    pub success: Rate,
}

impl Serialize for ForgerySummaryRow {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ForgerySummaryRow", 8)?;
        s.serialize_field("mode", &self.mode)?;
        s.serialize_field("adversary", &self.adversary)?;
        s.serialize_field("exposure", &self.exposure)?;
        rate_fields(&mut s, &self.success)?;
        s.end()
    }
}

pub struct ForgeryResults {
    pub trials: Vec<ForgeryTrialRow>,
    pub summary: Vec<ForgerySummaryRow>,
}

/// Positions whose partition the adversary can exploit. Learning a static
/// partition at any one position reveals it everywhere.
fn controlled_positions(mode: PartitionMode, exposed: &[usize], n: usize) -> Vec<usize> {
    match mode {
        PartitionMode::Static if !exposed.is_empty() => (0..n).collect(),
        _ => exposed.to_vec(),
    }
}

/// The adversary starts from a generator sample, learns the verifier's
/// partition at a uniformly random `floor(exposure N)` positions, and
/// rewrites the positions it controls with the most similar token on the
/// side it wants. It never sees the key.
pub fn run_forgery(session: &Session, exp: &ForgeryExperiment) -> Result<ForgeryResults> {
    let config = &session.config;
    let count = exp.trials.unwrap_or(config.trials);
    let codec = MessageCodec::for_message_bits(config.message_bits)?;
    let shape = session.shape(&config.generator)?;
    let layout = layout_for(&shape, codec.code().n())?;
    let detector = session.cell_detector(&layout, &shape, &[])?;
    let n = layout.n_tokens();
    let block_of: Vec<usize> = layout
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(j, r)| r.clone().map(move |_| j))
        .collect();

    let mut trials = Vec::new();
    let mut summary = Vec::new();
    for mode in [PartitionMode::Static, PartitionMode::Adaptive] {
        for &exposure in &exp.exposures {
            let tag = format!("forgery/{mode:?}/{exposure}");
            let seeds = trial_seeds(config.master_seed, &tag, count);
            let rows: Vec<[ForgeryTrialRow; 2]> = seeds
                .par_iter()
                .enumerate()
                .map(|(i, &seed)| {
                    let spec = session.partition_with_mode(session.trial_key(seed)?, mode)?;
                    let base = get_token_sequence(
                        &config.generator,
                        &session.codebook,
                        rng::trial_seed(seed, "generator", 0),
                    )?;
                    let exposed_count = (exposure * n as f64 + 1e-9).floor() as usize;
                    let exposed = sample(&mut rng::stream_rng(seed, "exposed", 0), n, exposed_count).into_vec();
                    let controlled = controlled_positions(mode, &exposed, n);
                    let target = random_bits(seed, "target", codec.message_bits());
                    let codeword = codec.encode(&target)?.codeword;

                    let forge = |side_at: &dyn Fn(usize) -> Side| -> Result<TokenSequence> {
                        let mut tokens = base.tokens().to_vec();
                        for &p in &controlled {
                            tokens[p] = replace_token(&session.codebook, &spec.at(p as u64), tokens[p], side_at(p));
                        }
                        base.with_tokens(tokens)
                    };
                    let green = forge(&|_| Side::Green)?;
                    let green_detected = match &detector {
                        CellDetector::PlainZ(alpha) => zero_bit_test(&green, &spec, *alpha)?.detected,
                        CellDetector::Folded(_) => {
                            extract(&green, &layout, &spec, &codec, config.tau, detector.detector())?.detected
                        }
                    };
                    let message = forge(&|p| Side::for_bit(codeword[block_of[p]]))?;
                    let report = extract(&message, &layout, &spec, &codec, config.tau, detector.detector())?;
                    let row = |adversary, detected, success| ForgeryTrialRow {
                        mode,
                        adversary,
                        exposure,
                        trial: i,
                        trial_seed: seed,
                        channel: "none".into(),
                        exposed_positions: exposed.len(),
                        controlled_positions: controlled.len(),
                        detected,
                        success,
                    };
                    Ok([
                        row(Adversary::ForceGreen, green_detected, green_detected),
                        row(
                            Adversary::ForgeMessage,
                            report.detected,
                            report.status == ExtractionStatus::Decoded
                                && report.decoded_message.as_deref() == Some(&target[..]),
                        ),
                    ])
                })
                .collect::<Result<_>>()?;
            for (a, adversary) in [Adversary::ForceGreen, Adversary::ForgeMessage].into_iter().enumerate() {
                summary.push(ForgerySummaryRow {
                    mode,
                    adversary,
                    exposure,
                    success: Rate::of(rows.iter().map(|r| r[a].success)),
                });
            }
            trials.extend(rows.into_iter().flatten());
        }
    }
    Ok(ForgeryResults { trials, summary })
}
