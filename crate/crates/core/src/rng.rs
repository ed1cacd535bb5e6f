//! Counter-derived RNG streams.
//!
//! Every randomized trial gets its own generator seeded from
//! `SHA-256(master_seed || stream tag || index)`, so results depend only on
//! the trial index and never on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type TrialRng = ChaCha8Rng;

/// 32-byte seed for stream `tag`, element `index`.
pub fn stream_seed(master_seed: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_be_bytes());
    hasher.update((tag.len() as u64).to_be_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_be_bytes());
    hasher.finalize().into()
}

pub fn stream_rng(master_seed: u64, tag: &str, index: u64) -> TrialRng {
    ChaCha8Rng::from_seed(stream_seed(master_seed, tag, index))
}

/// A 64-bit seed that identifies a trial in CSV output.
pub fn trial_seed(master_seed: u64, tag: &str, index: u64) -> u64 {
    let seed = stream_seed(master_seed, tag, index);
    u64::from_be_bytes(seed[..8].try_into().unwrap())
}

pub fn seeded(seed: u64) -> TrialRng {
    ChaCha8Rng::seed_from_u64(seed)
}
