//! `tokenmark`: embed, extract and detect token-level watermarks, and run
//! the experiment harness.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 watermark not
//! detected (`detect` only), 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tokenmark::asg::{PartitionMode, SecretKey};
use tokenmark::channel::{ChannelKind, ChannelSpec};
use tokenmark::codebook::synth_codebook;
use tokenmark::detect::{DetectionMode, DetectionReport};
use tokenmark::harness::{
    cmd_attack, cmd_calibrate, cmd_detect, cmd_embed, cmd_experiment, cmd_extract, format_bits, parse_bits,
    CodebookSource, EmbedRequest, ExperimentConfig, ExtractRequest, Session,
};
use tokenmark::utri::{GeneratorConfig, Paradigm, VAR_SCALES};
use tokenmark::Error;

#[derive(Parser)]
#[command(
    name = "tokenmark",
    version,
    about = "Keyed multi-bit watermarks for image-token sequences"
)]
struct Cli {
    #[command(flatten)]
    setup: Setup,
    #[command(subcommand)]
    command: Command,
}

/// Where the config comes from. Flags override the config file.
#[derive(Args)]
struct Setup {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Codebook file.
    #[arg(long, global = true, conflicts_with = "synth_codebook")]
    codebook: Option<PathBuf>,
    /// Synthetic codebook as `K,D,SEED`.
    #[arg(long, global = true, value_name = "K,D,SEED")]
    synth_codebook: Option<String>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<PartitionMode>,
    #[arg(long, global = true)]
    message_bits: Option<usize>,
    #[arg(long, global = true, value_parser = parse_paradigm)]
    paradigm: Option<Paradigm>,
    /// Token count of next-token sequences.
    #[arg(long, global = true)]
    length: Option<usize>,
    /// Comma-separated per-scale token counts of next-scale sequences.
    #[arg(long, global = true, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    /// `folded` or `plain-z`.
    #[arg(long, global = true, value_parser = parse_detection)]
    detection: Option<DetectionMode>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    calibration_trials: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    master_seed: Option<u64>,
}

#[derive(Args)]
struct KeyArg {
    /// Secret key, 16 to 64 bytes as hex.
    #[arg(long, env = "TOKENMARK_KEY", hide_env_values = true)]
    key: String,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    key: KeyArg,
    /// Sequence file (`.txt` for the text format).
    sequence: PathBuf,
    /// Sidecar; defaults to `<sequence>.json` when present.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Place a sequence shorter than the layout at the end, undoing the
    /// re-indexing of a prefix crop.
    #[arg(long)]
    assume_aligned: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or read) a sequence and embed a message.
    Embed {
        #[command(flatten)]
        key: KeyArg,
        /// Message as a string of 0s and 1s.
        #[arg(long)]
        message: String,
        /// Watermark this sequence file instead of generating one.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Detect and decode the message.
    Extract(ExtractArgs),
    /// Detect only. Exits with 2 when no watermark is found.
    Detect(ExtractArgs),
    /// Fill the calibration cache for every layout in the config.
    Calibrate,
    /// Run the experiments listed in the config and write CSV tables.
    Experiment {
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Pass a sequence through corruption channels.
    Attack {
        /// Channel such as `neighbor-flip:0.05` or `prefix-crop:0.25:aligned`;
        /// repeat to chain.
        #[arg(long = "channel", required = true)]
        channels: Vec<ChannelKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Write a random unit-norm codebook.
    SynthCodebook {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<PartitionMode, String> {
    match s {
        "adaptive" => Ok(PartitionMode::Adaptive),
        "static" => Ok(PartitionMode::Static),
        _ => Err("expected `adaptive` or `static`".into()),
    }
}

fn parse_paradigm(s: &str) -> Result<Paradigm, String> {
    match s {
        "next-token" => Ok(Paradigm::NextToken),
        "next-scale" => Ok(Paradigm::NextScale),
        _ => Err("expected `next-token` or `next-scale`".into()),
    }
}

fn parse_detection(s: &str) -> Result<DetectionMode, String> {
    match s {
        "folded" => Ok(DetectionMode::Folded),
        "plain-z" => Ok(DetectionMode::PlainZ),
        _ => Err("expected `folded` or `plain-z`".into()),
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. }
            | Error::Parameter(_)
            | Error::KeyLength(_)
            | Error::UnsupportedMessageLength(_)
            | Error::Capacity { .. }
            | Error::InsufficientTrials { .. } => 1,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl Setup {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let codebook = self
                    .codebook_source()?
                    .ok_or_else(|| usage("need --config, --codebook or --synth-codebook"))?;
                ExperimentConfig::new(codebook, GeneratorConfig::next_token(256))
            }
        };
        if let Some(source) = self.codebook_source()? {
            config.codebook = source;
        }
        match (self.paradigm, &self.scales, self.length) {
            (Some(Paradigm::NextScale), scales, _) => {
                config.generator = GeneratorConfig::next_scale(scales.as_deref().unwrap_or(&VAR_SCALES))
            }
            (Some(Paradigm::NextToken), _, length) => {
                config.generator = GeneratorConfig::next_token(length.unwrap_or(256))
            }
            (None, Some(scales), _) => config.generator = GeneratorConfig::next_scale(scales),
            (None, None, Some(length)) => config.generator = GeneratorConfig::next_token(length),
            (None, None, None) => {}
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = self.mode {
            config.mode = v;
        }
        if let Some(v) = self.message_bits {
            config.message_bits = v;
        }
        if let Some(v) = self.detection {
            config.detection = v;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.calibration_trials {
            config.calibration_trials = v;
        }
        if let Some(v) = &self.cache_dir {
            config.cache_dir = Some(v.clone());
        }
        if let Some(v) = self.master_seed {
            config.master_seed = v;
        }
        config.validate()?;
        Ok(config)
    }

    fn codebook_source(&self) -> Result<Option<CodebookSource>, Failure> {
        if let Some(path) = &self.codebook {
            return Ok(Some(CodebookSource::Path(path.clone())));
        }
        let Some(spec) = &self.synth_codebook else {
            return Ok(None);
        };
        let parts: Vec<u64> = spec
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(format!("--synth-codebook expects K,D,SEED, got `{spec}`")))?;
        match parts[..] {
            [size, dim, seed] => Ok(Some(CodebookSource::Synth {
                size: size as usize,
                dim: dim as usize,
                seed,
            })),
            _ => Err(usage(format!("--synth-codebook expects K,D,SEED, got `{spec}`"))),
        }
    }
}

fn key(arg: &KeyArg) -> Result<SecretKey, Failure> {
    SecretKey::from_hex(&arg.key).map_err(|e| usage(format!("--key: {e}")))
}

fn emit_report(report: &DetectionReport, path: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Failure::from(Error::from(e)))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Failure::from(Error::from(e))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::SynthCodebook {
            size,
            dim,
            seed,
            output,
        } => {
            synth_codebook(seed, size, dim)?.save(&output)?;
            eprintln!("wrote {size}x{dim} codebook to {}", output.display());
            Ok(0)
        }
        Command::Embed {
            key: k,
            message,
            input,
            seed,
            output,
        } => {
            let message = parse_bits(&message).map_err(|e| usage(format!("--message: {e}")))?;
            let mut config = cli.setup.config()?;
            if cli.setup.message_bits.is_none() {
                config.message_bits = message.len();
            }
            let session = Session::open(config)?;
            let outcome = cmd_embed(
                &session,
                &key(&k)?,
                &EmbedRequest {
                    message: &message,
                    input: input.as_deref(),
                    seed,
                    output: &output,
                },
            )?;
            let code = outcome.sidecar.code;
            eprintln!(
                "embedded {} bits with BCH({},{},{}) into {} tokens; sidecar {}",
                message.len(),
                code.n,
                code.k,
                code.d,
                outcome.sequence.len(),
                outcome.sidecar_path.display()
            );
            Ok(0)
        }
        Command::Extract(args) => {
            let session = Session::open(cli.setup.config()?)?;
            let report = cmd_extract(&session, &key(&args.key)?, &request(&args))?;
            emit_report(&report, args.report.as_deref())?;
            if let Some(m) = &report.decoded_message {
                eprintln!("message {}", format_bits(m));
            } else {
                eprintln!("{:?}", report.status);
            }
            Ok(0)
        }
        Command::Detect(args) => {
            let session = Session::open(cli.setup.config()?)?;
            let report = cmd_detect(&session, &key(&args.key)?, &request(&args))?;
            emit_report(&report, args.report.as_deref())?;
            Ok(if report.detected { 0 } else { 2 })
        }
        Command::Calibrate => {
            let session = Session::open(cli.setup.config()?)?;
            for entry in cmd_calibrate(&session)? {
                println!(
                    "{}",
                    serde_json::to_string(&entry).map_err(|e| Failure::from(Error::from(e)))?
                );
            }
            Ok(0)
        }
        Command::Experiment { output_dir, threads } => {
            let mut config = cli.setup.config()?;
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            let session = Session::open(config)?;
            let pool = rayon_pool(threads)?;
            let outputs = pool.install(|| cmd_experiment(&session))?;
            for f in outputs.files {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Attack {
            channels,
            seed,
            input,
            output,
        } => {
            let session = Session::open(cli.setup.config()?)?;
            let specs: Vec<ChannelSpec> = channels
                .into_iter()
                .enumerate()
                .map(|(j, kind)| ChannelSpec::new(kind, seed.wrapping_add(j as u64)))
                .collect();
            let out = cmd_attack(&session, &specs, &input, &output)?;
            eprintln!("wrote {} tokens to {}", out.len(), output.display());
            Ok(0)
        }
    }
}

fn request(args: &ExtractArgs) -> ExtractRequest<'_> {
    ExtractRequest {
        sequence: &args.sequence,
        sidecar: args.sidecar.as_deref(),
        assume_aligned: args.assume_aligned,
    }
}

fn rayon_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Failure {
        code: 3,
        message: e.to_string(),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
