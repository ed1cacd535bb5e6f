//! Keyed pseudorandom permutation over `{0, .., n-1}` with O(1) forward
//! and inverse queries.
//!
//! A balanced Feistel network on `2h` bits (the smallest even width with
//! `2^(2h) >= n`) is restricted to the domain by cycle walking. Round keys
//! come from the 32-byte seed, and the round function is the 64-bit
//! finalizer of SplitMix64.

const ROUNDS: usize = 8;

#[derive(Debug, Clone)]
pub struct KeyedPermutation {
    domain: u64,
    half_bits: u32,
    mask: u64,
    round_keys: [u64; ROUNDS],
}

impl KeyedPermutation {
    /// `domain` must be at least 2.
    pub fn new(domain: u64, seed: &[u8; 32]) -> Self {
        assert!(domain >= 2, "permutation domain must hold at least two elements");
        let bits = (64 - (domain - 1).leading_zeros()).max(2);
        let half_bits = bits.div_ceil(2);
        let words: [u64; 4] = std::array::from_fn(|i| u64::from_le_bytes(seed[i * 8..i * 8 + 8].try_into().unwrap()));
        let round_keys =
            std::array::from_fn(|r| mix64(words[r % 4] ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        KeyedPermutation {
            domain,
            half_bits,
            mask: (1u64 << half_bits) - 1,
            round_keys,
        }
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    /// Position of `x` in the permuted order.
    pub fn forward(&self, x: u64) -> u64 {
        debug_assert!(x < self.domain);
        let mut y = self.encrypt(x);
        while y >= self.domain {
            y = self.encrypt(y);
        }
        y
    }

    /// Element at position `y`; the inverse of [`forward`](Self::forward).
    pub fn inverse(&self, y: u64) -> u64 {
        debug_assert!(y < self.domain);
        let mut x = self.decrypt(y);
        while x >= self.domain {
            x = self.decrypt(x);
        }
        x
    }

    fn round(&self, r: usize, half: u64) -> u64 {
        mix64(half ^ self.round_keys[r]) & self.mask
    }

    fn encrypt(&self, x: u64) -> u64 {
        let mut left = x >> self.half_bits;
        let mut right = x & self.mask;
        for r in 0..ROUNDS {
            let next = left ^ self.round(r, right);
            left = right;
            right = next;
        }
        (left << self.half_bits) | right
    }

    fn decrypt(&self, y: u64) -> u64 {
        let mut left = y >> self.half_bits;
        let mut right = y & self.mask;
        for r in (0..ROUNDS).rev() {
            let prev = right ^ self.round(r, left);
            right = left;
            left = prev;
        }
        (left << self.half_bits) | right
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
