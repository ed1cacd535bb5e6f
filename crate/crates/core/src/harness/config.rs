//! Experiment configuration, a single versioned JSON document.
//!
//! ```json
//! {
//!   "version": 1,
//!   "codebook": { "synth": { "size": 4096, "dim": 8, "seed": 7 } },
//!   "gamma": 0.5,
//!   "mode": "adaptive",
//!   "generator": { "paradigm": "next-token", "length": 256, "family": "uniform" },
//!   "message_bits": 32,
//!   "channels": [ { "kind": "neighbor-flip", "p": 0.05 } ],
//!   "trials": 1000,
//!   "alpha": 0.01,
//!   "master_seed": 1,
//!   "output_dir": "results",
//!   "experiments": { "fpr": { "alphas": [0.05, 0.01] }, "forgery": {} }
//! }
//! ```
//!
//! Every field but `version`, `codebook` and `generator` has a default.
//! `key` is optional: experiments draw a fresh key per trial unless one is
//! pinned here, and the embed/extract commands take the key separately.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asg::{PartitionMode, SecretKey, DEFAULT_GAMMA};
use crate::bme::DEFAULT_TAU;
use crate::channel::{ChannelKind, ChannelSpec};
use crate::codebook::{synth_codebook, Codebook};
use crate::detect::{min_calibration_trials, DetectionMode, DEFAULT_ALPHA};
use crate::ecc::select_code;
use crate::error::{Error, Result};
use crate::utri::{GeneratorConfig, VAR_SCALES};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CodebookSource {
    Synth {
        size: usize,
        dim: usize,
        seed: u64,
    },
    /// A codebook file; relative paths resolve against the config file.
    Path(PathBuf),
}

impl CodebookSource {
    pub fn load(&self) -> Result<Codebook> {
        match self {
            CodebookSource::Synth { size, dim, seed } => synth_codebook(*seed, *size, *dim),
            CodebookSource::Path(p) => Codebook::load(p),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CodebookSource::Synth { size, dim, seed } => format!("synth:{size}x{dim}:seed={seed}"),
            CodebookSource::Path(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub codebook: CodebookSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub mode: PartitionMode,
    pub generator: GeneratorConfig,
    #[serde(default = "default_message_bits")]
    pub message_bits: usize,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_detection")]
    pub detection: DetectionMode,
    #[serde(default = "default_calibration_trials")]
    pub calibration_trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Calibration cache directory, `<output_dir>/calibration` if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub experiments: Experiments,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_message_bits() -> usize {
    32
}
fn default_trials() -> usize {
    1000
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_detection() -> DetectionMode {
    DetectionMode::Folded
}
fn default_calibration_trials() -> usize {
    20_000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Experiments to run; absent entries are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiments {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fpr: Option<FprExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_accuracy: Option<BitAccuracyExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histograms: Option<HistogramExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forgery: Option<ForgeryExperiment>,
}

/// (a) false positive rate against alpha on unwatermarked sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FprExperiment {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Also run the folded detector (needs calibration per alpha).
    #[serde(default = "yes")]
    pub folded: bool,
}

impl Default for FprExperiment {
    fn default() -> Self {
        FprExperiment {
            alphas: default_alphas(),
            trials: None,
            folded: true,
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.01, 0.001]
}
fn yes() -> bool {
    true
}

/// (b) bit accuracy against message length, per generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitAccuracyExperiment {
    #[serde(default = "default_message_lengths")]
    pub message_bits: Vec<usize>,
    /// Defaults to a 256-token next-token and a 680-token next-scale
    /// generator.
    #[serde(default = "default_generators")]
    pub generators: Vec<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

impl Default for BitAccuracyExperiment {
    fn default() -> Self {
        BitAccuracyExperiment {
            message_bits: default_message_lengths(),
            generators: default_generators(),
            trials: None,
        }
    }
}

fn default_message_lengths() -> Vec<usize> {
    vec![16, 32, 48, 64]
}
fn default_generators() -> Vec<GeneratorConfig> {
    vec![
        GeneratorConfig::next_token(256),
        GeneratorConfig::next_scale(&VAR_SCALES),
    ]
}

/// (c) detection rate and bit accuracy against channel intensity. Each
/// entry is one sweep point, applied after the base `channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessExperiment {
    #[serde(default = "default_sweep")]
    pub sweep: Vec<ChannelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

impl Default for RobustnessExperiment {
    fn default() -> Self {
        RobustnessExperiment {
            sweep: default_sweep(),
            trials: None,
        }
    }
}

fn default_sweep() -> Vec<ChannelKind> {
    let mut sweep = Vec::new();
    for p in [0.0, 0.05, 0.1, 0.2, 0.3] {
        sweep.push(ChannelKind::NeighborFlip { p, neighbors: 8 });
    }
    for p in [0.05, 0.1, 0.2, 0.3] {
        sweep.push(ChannelKind::UniformFlip { p });
    }
    for fraction in [0.1, 0.25, 0.5] {
        sweep.push(ChannelKind::SpanErase { fraction });
    }
    for fraction in [0.1, 0.25] {
        sweep.push(ChannelKind::PrefixCrop {
            fraction,
            aligned: true,
        });
        sweep.push(ChannelKind::PrefixCrop {
            fraction,
            aligned: false,
        });
    }
    sweep
}

/// (d) global green ratio for the correct key, a wrong key, and
/// unwatermarked sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramExperiment {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

impl Default for HistogramExperiment {
    fn default() -> Self {
        HistogramExperiment {
            bins: default_bins(),
            trials: None,
        }
    }
}

fn default_bins() -> usize {
    50
}

/// (e) forgery success against the fraction of positions whose partition
/// the adversary knows, static against adaptive partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeryExperiment {
    #[serde(default = "default_exposures")]
    pub exposures: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

impl Default for ForgeryExperiment {
    fn default() -> Self {
        ForgeryExperiment {
            exposures: default_exposures(),
            trials: None,
        }
    }
}

fn default_exposures() -> Vec<f64> {
    vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0]
}

impl ExperimentConfig {
    /// A config with defaults everywhere except the required fields.
    pub fn new(codebook: CodebookSource, generator: GeneratorConfig) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            codebook,
            key: None,
            gamma: default_gamma(),
            mode: PartitionMode::default(),
            generator,
            message_bits: default_message_bits(),
            channels: Vec::new(),
            trials: default_trials(),
            alpha: default_alpha(),
            tau: default_tau(),
            detection: default_detection(),
            calibration_trials: default_calibration_trials(),
            master_seed: 0,
            output_dir: default_output_dir(),
            cache_dir: None,
            experiments: Experiments::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads and validates a config; relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let CodebookSource::Path(p) = &mut config.codebook {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for dir in [Some(&mut config.output_dir), config.cache_dir.as_mut()]
            .into_iter()
            .flatten()
        {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        if let CodebookSource::Synth { size, dim, .. } = self.codebook {
            if size < 2 || dim < 1 {
                return Err(Error::config("codebook.synth", "needs size >= 2 and dim >= 1"));
            }
        }
        if let Some(k) = &self.key {
            SecretKey::from_hex(k).map_err(|e| Error::config("key", e.to_string()))?;
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1)"));
        }
        self.generator.validate()?;
        check_message_bits("message_bits", self.message_bits, self.generator.sequence_len())?;
        for (i, c) in self.channels.iter().enumerate() {
            c.kind
                .validate()
                .map_err(|e| Error::config(format!("channels[{i}]"), e.to_string()))?;
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be positive"));
        }
        check_alpha("alpha", self.alpha)?;
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config("tau", "must lie in [0, 1)"));
        }
        self.check_calibration_trials("alpha", self.alpha)?;
        let ex = &self.experiments;
        if let Some(fpr) = &ex.fpr {
            if fpr.alphas.is_empty() {
                return Err(Error::config("experiments.fpr.alphas", "must not be empty"));
            }
            for (i, &a) in fpr.alphas.iter().enumerate() {
                let field = format!("experiments.fpr.alphas[{i}]");
                check_alpha(&field, a)?;
                if fpr.folded {
                    self.check_calibration_trials(&field, a)?;
                }
            }
            check_trials("experiments.fpr.trials", fpr.trials)?;
        }
        if let Some(b) = &ex.bit_accuracy {
            if b.message_bits.is_empty() || b.generators.is_empty() {
                return Err(Error::config(
                    "experiments.bit_accuracy",
                    "needs at least one message length and one generator",
                ));
            }
            for (i, g) in b.generators.iter().enumerate() {
                g.validate()
                    .map_err(|e| Error::config(format!("experiments.bit_accuracy.generators[{i}]"), e.to_string()))?;
                for &bits in &b.message_bits {
                    check_message_bits("experiments.bit_accuracy.message_bits", bits, g.sequence_len())?;
                }
            }
            check_trials("experiments.bit_accuracy.trials", b.trials)?;
        }
        if let Some(r) = &ex.robustness {
            for (i, c) in r.sweep.iter().enumerate() {
                c.validate()
                    .map_err(|e| Error::config(format!("experiments.robustness.sweep[{i}]"), e.to_string()))?;
            }
            check_trials("experiments.robustness.trials", r.trials)?;
        }
        if let Some(h) = &ex.histograms {
            if h.bins == 0 {
                return Err(Error::config("experiments.histograms.bins", "must be positive"));
            }
            check_trials("experiments.histograms.trials", h.trials)?;
        }
        if let Some(f) = &ex.forgery {
            if f.exposures.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(Error::config("experiments.forgery.exposures", "must lie in [0, 1]"));
            }
            check_trials("experiments.forgery.trials", f.trials)?;
        }
        Ok(())
    }

    fn check_calibration_trials(&self, field: &str, alpha: f64) -> Result<()> {
        let required = min_calibration_trials(alpha);
        if self.detection == DetectionMode::Folded && self.calibration_trials < required {
            return Err(Error::config(
                "calibration_trials",
                format!(
                    "{} trials are too few for {field} = {alpha}; need at least {required}",
                    self.calibration_trials
                ),
            ));
        }
        Ok(())
    }

    pub fn fixed_key(&self) -> Result<Option<SecretKey>> {
        self.key.as_deref().map(SecretKey::from_hex).transpose()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("calibration"))
    }
}

fn check_alpha(field: &str, alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::config(field, format!("alpha must lie in (0, 0.5), got {alpha}")))
    }
}

fn check_trials(field: &str, trials: Option<usize>) -> Result<()> {
    match trials {
        Some(0) => Err(Error::config(field, "must be positive")),
        _ => Ok(()),
    }
}

fn check_message_bits(field: &str, bits: usize, n_tokens: usize) -> Result<()> {
    let code = select_code(bits).map_err(|e| Error::config(field, e.to_string()))?;
    if code.n() > n_tokens {
        return Err(Error::config(
            field,
            format!(
                "{bits} bits need {} blocks but the generator makes only {n_tokens} tokens",
                code.n()
            ),
        ));
    }
    Ok(())
}
