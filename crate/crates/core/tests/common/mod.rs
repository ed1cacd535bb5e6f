#![allow(dead_code)]

use std::sync::OnceLock;

use tokenmark::asg::{PartitionMode, PartitionSpec, SecretKey};
use tokenmark::codebook::{synth_codebook, Codebook};

pub fn key(seed: u64) -> SecretKey {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).to_le_bytes());
    SecretKey::new(bytes.to_vec()).unwrap()
}

pub fn spec(seed: u64, gamma: f64, k: usize) -> PartitionSpec {
    PartitionSpec::new(key(seed), gamma, k).unwrap()
}

pub fn spec_with_mode(seed: u64, k: usize, mode: PartitionMode) -> PartitionSpec {
    PartitionSpec::with_mode(key(seed), 0.5, k, mode).unwrap()
}

/// The 4096-entry codebook shared by a test binary.
pub fn codebook_4096() -> &'static Codebook {
    static CB: OnceLock<Codebook> = OnceLock::new();
    CB.get_or_init(|| synth_codebook(4096, 4096, 8).unwrap())
}

pub fn codebook_1024() -> &'static Codebook {
    static CB: OnceLock<Codebook> = OnceLock::new();
    CB.get_or_init(|| synth_codebook(1024, 1024, 8).unwrap())
}

use rand::Rng;
use tokenmark::bme::{embed_sequence, WatermarkLayout};
use tokenmark::ecc::MessageCodec;
use tokenmark::rng;
use tokenmark::utri::{get_token_sequence, layout_for, GeneratorConfig, TokenSequence};

pub const SCHEDULE_630: [usize; 9] = [1, 4, 9, 16, 36, 64, 100, 144, 256];

/// A watermarked sequence with everything needed to read it back.
pub struct Marked {
    pub spec: PartitionSpec,
    pub codec: MessageCodec,
    pub layout: WatermarkLayout,
    pub message: Vec<bool>,
    pub codeword: Vec<bool>,
    pub seq: TokenSequence,
}

pub fn random_bits(r: &mut impl Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| r.random()).collect()
}

/// Embeds a random message with a key derived from `seed`.
pub fn watermark(cb: &Codebook, generator: &GeneratorConfig, message_bits: usize, seed: u64) -> Marked {
    let mut r = rng::stream_rng(seed, "marked", 0);
    let spec = PartitionSpec::new(key(r.random()), 0.5, cb.size()).unwrap();
    let codec = MessageCodec::for_message_bits(message_bits).unwrap();
    let message = random_bits(&mut r, message_bits);
    let payload = codec.encode(&message).unwrap();
    let base = get_token_sequence(generator, cb, r.random()).unwrap();
    let layout = layout_for(&base, codec.code().n()).unwrap();
    let tokens = embed_sequence(base.tokens(), &layout, &payload.codeword, &spec, cb).unwrap();
    Marked {
        spec,
        codec,
        layout,
        message,
        codeword: payload.codeword,
        seq: base.with_tokens(tokens).unwrap(),
    }
}

pub fn bit_accuracy(a: &[bool], b: &[bool]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
