//! Token-level watermarking for autoregressive image generators: keyed
//! green/red partitions, block message embedding with BCH protection,
//! and zero-bit / multi-bit detection.

pub mod asg;
pub mod bme;
pub mod channel;
pub mod codebook;
pub mod detect;
pub mod ecc;
pub mod error;
pub mod harness;
pub mod permutation;
pub mod rng;
pub mod stats;
pub mod utri;

pub use error::{Error, Result};
