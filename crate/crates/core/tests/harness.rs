mod common;

use std::fs;

use tempfile::tempdir;
use tokenmark::asg::{PartitionMode, SecretKey};
use tokenmark::detect::ExtractionStatus;
use tokenmark::error::Error;
use tokenmark::harness::config::{BitAccuracyExperiment, ForgeryExperiment, HistogramExperiment};
use tokenmark::harness::experiments::{run_bit_accuracy, run_forgery, run_histograms, Adversary};
use tokenmark::harness::{
    cmd_calibrate, cmd_embed, cmd_extract, CodebookSource, EmbedRequest, ExperimentConfig, ExtractRequest, Session,
};
use tokenmark::utri::{GeneratorConfig, VAR_SCALES};

fn config() -> ExperimentConfig {
    ExperimentConfig::new(
        CodebookSource::Synth {
            size: 1024,
            dim: 8,
            seed: 1,
        },
        GeneratorConfig::next_token(256),
    )
}

fn key_bytes() -> Vec<u8> {
    (0u8..32).map(|i| i.wrapping_mul(37).wrapping_add(11)).collect()
}

fn message() -> Vec<bool> {
    (0..32).map(|i| (i * 7 + 3) % 5 < 2).collect()
}

#[test]
fn embed_then_extract_recovers_the_message() {
    let dir = tempdir().unwrap();
    let session = Session::in_memory(config()).unwrap();
    let key = SecretKey::new(key_bytes()).unwrap();
    let out = dir.path().join("marked.tms");
    let msg = message();
    let embedded = cmd_embed(
        &session,
        &key,
        &EmbedRequest {
            message: &msg,
            input: None,
            seed: 5,
            output: &out,
        },
    )
    .unwrap();
    assert!(embedded.sidecar_path.exists());
    let request = ExtractRequest {
        sequence: &out,
        sidecar: None,
        assume_aligned: false,
    };
    let report = cmd_extract(&session, &key, &request).unwrap();
    assert!(report.detected);
    assert_eq!(report.status, ExtractionStatus::Decoded);
    assert_eq!(report.decoded_message.as_deref(), Some(&msg[..]));
    assert_eq!(report.corrected_errors, Some(0));

    let wrong = SecretKey::new(vec![0xa5; 32]).unwrap();
    let report = cmd_extract(&session, &wrong, &request).unwrap();
    assert_eq!(report.status, ExtractionStatus::NotWatermarked);
    assert!(report.decoded_message.is_none());
}

#[test]
fn sidecar_never_contains_key_material() {
    let dir = tempdir().unwrap();
    let session = Session::in_memory(config()).unwrap();
    let bytes = key_bytes();
    let key = SecretKey::new(bytes.clone()).unwrap();
    let out = dir.path().join("marked.tms");
    let msg = message();
    let embedded = cmd_embed(
        &session,
        &key,
        &EmbedRequest {
            message: &msg,
            input: None,
            seed: 6,
            output: &out,
        },
    )
    .unwrap();
    let raw = fs::read(&embedded.sidecar_path).unwrap();
    let text = String::from_utf8(raw.clone()).unwrap().to_lowercase();
    assert!(!text.contains(&hex::encode(&bytes)));
    assert!(!text.contains(&hex::encode(&bytes[..8])));
    assert!(!raw.windows(8).any(|w| w == &bytes[..8]));
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(json.get("key").is_none());
    assert!(!format!("{key:?}").contains(&hex::encode(&bytes[..4])));
}

#[test]
fn calibration_is_cached_and_reproducible() {
    let dir = tempdir().unwrap();
    let mut cfg = config();
    cfg.cache_dir = Some(dir.path().join("cache"));
    let first = cmd_calibrate(&Session::open(cfg.clone()).unwrap()).unwrap();
    assert!(!first.is_empty());
    assert!(first.iter().all(|e| !e.cache_hit));
    for e in &first {
        assert_eq!(e.record.trials, cfg.calibration_trials);
        assert!(e.record.exceedances as f64 <= e.record.alpha * e.record.trials as f64);
    }
    let second = cmd_calibrate(&Session::open(cfg.clone()).unwrap()).unwrap();
    assert!(second.iter().all(|e| e.cache_hit));
    assert_eq!(
        first.iter().map(|e| &e.record).collect::<Vec<_>>(),
        second.iter().map(|e| &e.record).collect::<Vec<_>>()
    );
    fs::remove_dir_all(dir.path().join("cache")).unwrap();
    let third = cmd_calibrate(&Session::open(cfg).unwrap()).unwrap();
    assert!(third.iter().all(|e| !e.cache_hit));
    let thresholds =
        |v: &[tokenmark::harness::CalibrationEntry]| v.iter().map(|e| e.record.threshold).collect::<Vec<_>>();
    assert_eq!(thresholds(&first), thresholds(&third));
}

#[test]
fn clean_bit_accuracy_is_perfect() {
    let mut cfg = config();
    cfg.master_seed = 3;
    let session = Session::in_memory(cfg).unwrap();
    let exp = BitAccuracyExperiment {
        message_bits: vec![16, 32, 48, 64],
        generators: vec![
            GeneratorConfig::next_token(256),
            GeneratorConfig::next_scale(&VAR_SCALES),
        ],
        trials: Some(50),
    };
    let results = run_bit_accuracy(&session, &exp).unwrap();
    assert_eq!(results.summary.len(), 8);
    for row in &results.summary {
        assert_eq!(row.bit_accuracy, 1.0, "{row:?}");
        assert_eq!(row.exact_rate, 1.0);
        assert_eq!(row.tpr, 1.0);
    }
}

#[test]
fn wrong_key_ratio_histogram_centres_on_gamma() {
    let mut cfg = config();
    cfg.master_seed = 4;
    let session = Session::in_memory(cfg).unwrap();
    let results = run_histograms(
        &session,
        &HistogramExperiment {
            bins: 50,
            trials: Some(1000),
        },
    )
    .unwrap();
    let wrong = results.summary.iter().find(|r| r.condition == "wrong-key").unwrap();
    assert_eq!(wrong.trials, 1000);
    assert!((0.48..=0.52).contains(&wrong.mean), "{}", wrong.mean);
    let total: usize = results.bins.iter().map(|b| b.wrong_key).sum();
    assert_eq!(total, 1000);
}

#[test]
fn adaptive_partitions_resist_forgery_better_than_static() {
    let mut cfg = config();
    cfg.master_seed = 5;
    let session = Session::in_memory(cfg).unwrap();
    let results = run_forgery(
        &session,
        &ForgeryExperiment {
            exposures: vec![0.5],
            trials: Some(200),
        },
    )
    .unwrap();
    for adversary in [Adversary::ForceGreen, Adversary::ForgeMessage] {
        let rate = |mode| {
            results
                .summary
                .iter()
                .find(|r| r.mode == mode && r.adversary == adversary)
                .unwrap()
                .success
                .rate
        };
        assert!(
            rate(PartitionMode::Adaptive) < rate(PartitionMode::Static),
            "{adversary:?}"
        );
    }
}

#[test]
fn config_errors_name_the_field() {
    let field_of = |cfg: ExperimentConfig| match cfg.validate().unwrap_err() {
        Error::Config { field, .. } => field,
        other => panic!("unexpected {other:?}"),
    };
    let mut c = config();
    c.gamma = 1.5;
    assert_eq!(field_of(c), "gamma");
    let mut c = config();
    c.message_bits = 65;
    assert_eq!(field_of(c), "message_bits");
    let mut c = config();
    c.calibration_trials = 10;
    assert_eq!(field_of(c), "calibration_trials");

    let mut json: serde_json::Value = serde_json::from_str(&config().to_json()).unwrap();
    json["gama"] = 0.5.into();
    let err = ExperimentConfig::from_json(&json.to_string()).unwrap_err().to_string();
    assert!(err.contains("gama"), "{err}");
}
