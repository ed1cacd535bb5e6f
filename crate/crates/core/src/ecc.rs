//! Binary narrow-sense BCH codes over GF(2^m), m in 3..=7.
//!
//! Codewords are at most 127 bits, so polynomials over GF(2) are held in a
//! `u128` with bit `i` the coefficient of `x^i`. Encoding is systematic:
//! parity occupies positions `0..n-k` and the message positions `n-k..n`.
//! Decoding computes `2t` syndromes, runs Berlekamp-Massey, and locates
//! errors with a Chien search. Any inconsistency (locator degree above
//! `t`, root count not matching the degree, or a non-codeword result) is a
//! decode failure. Patterns with more than `t` errors may still decode to
//! a wrong codeword; that cannot be ruled out by any bounded-distance
//! decoder.

use std::fmt;

use crate::error::{Error, Result};

/// Primitive polynomials, bit `i` = coefficient of `x^i`.
fn primitive_poly(m: u32) -> Option<u32> {
    match m {
        3 => Some(0b1011),      // x^3 + x + 1
        4 => Some(0b1_0011),    // x^4 + x + 1
        5 => Some(0b10_0101),   // x^5 + x^2 + 1
        6 => Some(0b100_0011),  // x^6 + x + 1
        7 => Some(0b1000_1001), // x^7 + x^3 + 1
        _ => None,
    }
}

#[derive(Debug, Clone)]
struct GaloisField {
    n: usize,
    exp: Vec<u16>,
    log: Vec<u16>,
}

impl GaloisField {
    fn new(m: u32) -> Result<Self> {
        let poly = primitive_poly(m)
            .ok_or_else(|| Error::Parameter(format!("GF(2^{m}) is not supported (m must be 3..=7)")))?;
        let n = (1usize << m) - 1;
        let mut exp = vec![0u16; 2 * n];
        let mut log = vec![0u16; n + 1];
        let mut x = 1u32;
        for (i, e) in exp.iter_mut().take(n).enumerate() {
            *e = x as u16;
            log[x as usize] = i as u16;
            x <<= 1;
            if x & (1 << m) != 0 {
                x ^= poly;
            }
        }
        for i in n..2 * n {
            exp[i] = exp[i - n];
        }
        Ok(GaloisField { n, exp, log })
    }

    fn alpha_pow(&self, e: usize) -> u16 {
        self.exp[e % self.n]
    }

    fn mul(&self, a: u16, b: u16) -> u16 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
        }
    }

    fn div(&self, a: u16, b: u16) -> u16 {
        assert!(b != 0, "division by zero in GF(2^m)");
        if a == 0 {
            0
        } else {
            self.exp[(self.log[a as usize] as usize + self.n - self.log[b as usize] as usize) % self.n]
        }
    }

    /// Cyclotomic coset of `i` modulo `n`.
    fn coset(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i % self.n];
        let mut j = (2 * i) % self.n;
        while j != out[0] {
            out.push(j);
            j = (2 * j) % self.n;
        }
        out
    }

    /// Minimal polynomial of `alpha^i` as a GF(2) bit polynomial.
    fn minimal_poly(&self, i: usize) -> u128 {
        let mut coeffs: Vec<u16> = vec![1];
        for e in self.coset(i) {
            let root = self.alpha_pow(e);
            let mut next = vec![0u16; coeffs.len() + 1];
            for (d, &c) in coeffs.iter().enumerate() {
                next[d + 1] ^= c;
                next[d] ^= self.mul(c, root);
            }
            coeffs = next;
        }
        coeffs.iter().enumerate().fold(0u128, |acc, (d, &c)| {
            debug_assert!(c <= 1, "minimal polynomial must have binary coefficients");
            acc | ((c as u128) << d)
        })
    }
}

fn degree(p: u128) -> u32 {
    127 - p.leading_zeros()
}

fn poly_mul(a: u128, b: u128) -> u128 {
    let mut out = 0u128;
    for i in 0..128 {
        if b >> i & 1 == 1 {
            out ^= a << i;
        }
    }
    out
}

fn poly_mod(mut a: u128, g: u128) -> u128 {
    let dg = degree(g);
    while a != 0 && degree(a) >= dg {
        a ^= g << (degree(a) - dg);
    }
    a
}

fn to_poly(bits: &[bool]) -> u128 {
    bits.iter()
        .enumerate()
        .fold(0u128, |acc, (i, &b)| acc | ((b as u128) << i))
}

fn from_poly(p: u128, len: usize) -> Vec<bool> {
    (0..len).map(|i| p >> i & 1 == 1).collect()
}

#[derive(Clone)]
pub struct BchCode {
    m: u32,
    n: usize,
    k: usize,
    d: usize,
    t: usize,
    designed_distance: usize,
    generator: u128,
    field: GaloisField,
}

impl fmt::Debug for BchCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BCH({}, {}, {}) t={}", self.n, self.k, self.d, self.t)
    }
}

impl PartialEq for BchCode {
    fn eq(&self, other: &Self) -> bool {
        (self.m, self.k, self.d) == (other.m, other.k, other.d)
    }
}

impl BchCode {
    /// Narrow-sense BCH code of length `2^m - 1`, dimension `k`, decoded up
    /// to `t = floor((d-1)/2)` errors.
    ///
    /// The generator is the product of minimal polynomials of
    /// `alpha^1, alpha^2, ..` taken in order until the roots
    /// `alpha^1..alpha^(d-1)` are all present and the degree reaches
    /// `n - k`. When more consecutive roots are needed to reach `n - k`,
    /// the true designed distance exceeds `d`; see
    /// [`designed_distance`](Self::designed_distance).
    pub fn new(m: u32, k: usize, d: usize) -> Result<Self> {
        let field = GaloisField::new(m)?;
        let n = field.n;
        if k == 0 || k >= n || d < 3 {
            return Err(Error::Parameter(format!("invalid BCH parameters n={n}, k={k}, d={d}")));
        }
        let parity = n - k;
        let mut covered = vec![false; n];
        let mut generator = 1u128;
        let mut i = 1;
        while i < d || (degree(generator) as usize) < parity {
            if i >= n {
                return Err(Error::Parameter(format!("no BCH({n}, {k}) code with distance {d}")));
            }
            if !covered[i] {
                for e in field.coset(i) {
                    covered[e] = true;
                }
                generator = poly_mul(generator, field.minimal_poly(i));
            }
            i += 1;
        }
        if degree(generator) as usize != parity {
            return Err(Error::Parameter(format!(
                "no narrow-sense BCH({n}, {k}) code with distance {d} (generator degree {})",
                degree(generator)
            )));
        }
        let designed_distance = (1..n).find(|&r| !covered[r]).unwrap_or(n);
        Ok(BchCode {
            m,
            n,
            k,
            d,
            t: (d - 1) / 2,
            designed_distance,
            generator,
            field,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Nominal minimum distance.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Errors corrected by [`decode`](Self::decode).
    pub fn t(&self) -> usize {
        self.t
    }

    /// Distance guaranteed by the consecutive roots of the generator.
    pub fn designed_distance(&self) -> usize {
        self.designed_distance
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// Generator coefficients, lowest degree first.
    pub fn generator(&self) -> Vec<bool> {
        from_poly(self.generator, self.n - self.k + 1)
    }

    /// Systematic encoding. Messages shorter than `k` are zero-padded in
    /// the high message positions.
    pub fn encode(&self, message: &[bool]) -> Result<Vec<bool>> {
        if message.len() > self.k {
            return Err(Error::Length {
                what: "BCH message",
                expected: self.k,
                got: message.len(),
            });
        }
        let shifted = to_poly(message) << (self.n - self.k);
        let parity = poly_mod(shifted, self.generator);
        Ok(from_poly(shifted | parity, self.n))
    }

    /// True if `word` is divisible by the generator.
    pub fn is_codeword(&self, word: &[bool]) -> bool {
        word.len() == self.n && poly_mod(to_poly(word), self.generator) == 0
    }

    /// Message positions of a (possibly corrupted) word, without correction.
    pub fn systematic_bits(&self, word: &[bool]) -> Vec<bool> {
        word[self.n - self.k..].to_vec()
    }

    pub fn decode(&self, received: &[bool]) -> Result<Decoded> {
        if received.len() != self.n {
            return Err(Error::Length {
                what: "BCH received word",
                expected: self.n,
                got: received.len(),
            });
        }
        let failure = Error::DecodeFailure { t: self.t };
        let word = to_poly(received);
        let syndromes = self.syndromes(word);
        if syndromes.iter().all(|&s| s == 0) {
            return Ok(Decoded {
                message: self.systematic_bits(received),
                codeword: received.to_vec(),
                corrected: 0,
            });
        }
        let locator = self.berlekamp_massey(&syndromes);
        let errors = locator.len() - 1;
        if errors > self.t {
            return Err(failure);
        }
        // Chien search: position i is in error iff locator(alpha^-i) == 0.
        let mut flips = 0u128;
        let mut found = 0;
        for i in 0..self.n {
            let x_inv = self.field.alpha_pow(self.n - i);
            let mut acc = 0u16;
            let mut power = 1u16;
            for &c in &locator {
                acc ^= self.field.mul(c, power);
                power = self.field.mul(power, x_inv);
            }
            if acc == 0 {
                flips |= 1u128 << i;
                found += 1;
            }
        }
        if found != errors {
            return Err(failure);
        }
        let corrected = word ^ flips;
        if poly_mod(corrected, self.generator) != 0 {
            return Err(failure);
        }
        let codeword = from_poly(corrected, self.n);
        Ok(Decoded {
            message: self.systematic_bits(&codeword),
            codeword,
            corrected: errors,
        })
    }

    fn syndromes(&self, word: u128) -> Vec<u16> {
        (1..=2 * self.t)
            .map(|j| {
                (0..self.n)
                    .filter(|&i| word >> i & 1 == 1)
                    .fold(0u16, |acc, i| acc ^ self.field.alpha_pow(i * j))
            })
            .collect()
    }

    /// Error-locator polynomial, lowest degree first, trimmed to its degree.
    fn berlekamp_massey(&self, s: &[u16]) -> Vec<u16> {
        let f = &self.field;
        let mut c = vec![1u16];
        let mut b = vec![1u16];
        let mut len = 0usize;
        let mut shift = 1usize;
        let mut last_discrepancy = 1u16;
        for step in 0..s.len() {
            let mut discrepancy = s[step];
            for i in 1..=len.min(c.len() - 1) {
                discrepancy ^= f.mul(c[i], s[step - i]);
            }
            if discrepancy == 0 {
                shift += 1;
                continue;
            }
            let scale = f.div(discrepancy, last_discrepancy);
            let mut next = c.clone();
            if next.len() < b.len() + shift {
                next.resize(b.len() + shift, 0);
            }
            for (i, &bi) in b.iter().enumerate() {
                next[i + shift] ^= f.mul(scale, bi);
            }
            if 2 * len <= step {
                b = std::mem::replace(&mut c, next);
                len = step + 1 - len;
                last_discrepancy = discrepancy;
                shift = 1;
            } else {
                c = next;
                shift += 1;
            }
        }
        c.resize(len + 1, 0);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// The `k` message positions of the corrected codeword.
    pub message: Vec<bool>,
    pub codeword: Vec<bool>,
    pub corrected: usize,
}

/// `(m, k, d)` for the supported message lengths, ordered by `k`.
const CODE_TABLE: [(u32, usize, usize); 4] = [(5, 16, 7), (6, 36, 5), (6, 51, 5), (7, 64, 21)];

pub const MAX_MESSAGE_BITS: usize = 64;

/// Smallest table code whose dimension holds `message_bits`:
/// 16 -> BCH(31,16,7), 32 -> BCH(63,36,5), 48 -> BCH(63,51,5),
/// 64 -> BCH(127,64,21).
pub fn select_code(message_bits: usize) -> Result<BchCode> {
    if message_bits == 0 || message_bits > MAX_MESSAGE_BITS {
        return Err(Error::UnsupportedMessageLength(message_bits));
    }
    let &(m, k, d) = CODE_TABLE
        .iter()
        .find(|&&(_, k, _)| k >= message_bits)
        .expect("table covers every length up to MAX_MESSAGE_BITS");
    BchCode::new(m, k, d)
}

/// A message of `message_bits` bits carried by a BCH code, zero-padded to
/// the code dimension.
#[derive(Debug, Clone)]
pub struct MessageCodec {
    code: BchCode,
    message_bits: usize,
}

/// An encoded message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePayload {
    pub message: Vec<bool>,
    pub codeword: Vec<bool>,
}

impl MessageCodec {
    pub fn new(code: BchCode, message_bits: usize) -> Result<Self> {
        if message_bits == 0 || message_bits > code.k() {
            return Err(Error::UnsupportedMessageLength(message_bits));
        }
        Ok(MessageCodec { code, message_bits })
    }

    pub fn for_message_bits(message_bits: usize) -> Result<Self> {
        Self::new(select_code(message_bits)?, message_bits)
    }

    pub fn code(&self) -> &BchCode {
        &self.code
    }

    pub fn message_bits(&self) -> usize {
        self.message_bits
    }

    pub fn padding_bits(&self) -> usize {
        self.code.k() - self.message_bits
    }

    pub fn encode(&self, message: &[bool]) -> Result<MessagePayload> {
        if message.len() != self.message_bits {
            return Err(Error::Length {
                what: "message",
                expected: self.message_bits,
                got: message.len(),
            });
        }
        Ok(MessagePayload {
            message: message.to_vec(),
            codeword: self.code.encode(message)?,
        })
    }

    /// Corrects `received` and strips the padding. A corrected codeword
    /// whose padding bits are not all zero is reported as a failure.
    pub fn decode(&self, received: &[bool]) -> Result<(Vec<bool>, usize)> {
        let decoded = self.code.decode(received)?;
        let (message, padding) = decoded.message.split_at(self.message_bits);
        if padding.iter().any(|&b| b) {
            return Err(Error::DecodeFailure { t: self.code.t() });
        }
        Ok((message.to_vec(), decoded.corrected))
    }

    /// Uncorrected message bits read straight from the systematic positions.
    pub fn raw_message(&self, received: &[bool]) -> Vec<bool> {
        let mut bits = self.code.systematic_bits(received);
        bits.truncate(self.message_bits);
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_bits(r: &mut impl Rng, len: usize) -> Vec<bool> {
        (0..len).map(|_| r.random()).collect()
    }

    /// Long division over GF(2) on bool vectors, lowest degree first.
    fn remainder_oracle(word: &[bool], generator: &[bool]) -> Vec<bool> {
        let mut rem = word.to_vec();
        let dg = generator.len() - 1;
        for top in (dg..rem.len()).rev() {
            if rem[top] {
                for (i, &g) in generator.iter().enumerate() {
                    rem[top - dg + i] ^= g;
                }
            }
        }
        rem.truncate(dg);
        rem
    }

    #[test]
    fn table_parameters() {
        let expect = [
            (16, 31, 16, 7, 3),
            (32, 63, 36, 5, 2),
            (48, 63, 51, 5, 2),
            (64, 127, 64, 21, 10),
        ];
        for (b, n, k, d, t) in expect {
            let c = select_code(b).unwrap();
            assert_eq!((c.n(), c.k(), c.d(), c.t()), (n, k, d, t), "B={b}");
            assert_eq!(c.generator().len() - 1, n - k);
        }
        assert!((select_code(32).unwrap().rate() - 36.0 / 63.0).abs() < 1e-15);
        assert!((select_code(32).unwrap().rate() - 0.571).abs() < 5e-4);
    }

    #[test]
    fn designed_distances() {
        assert_eq!(select_code(16).unwrap().designed_distance(), 7);
        assert_eq!(select_code(32).unwrap().designed_distance(), 11);
        assert_eq!(select_code(48).unwrap().designed_distance(), 5);
        assert_eq!(select_code(64).unwrap().designed_distance(), 21);
    }

    #[test]
    fn intermediate_lengths_pad_to_next_code() {
        let codec = MessageCodec::for_message_bits(20).unwrap();
        assert_eq!((codec.code().n(), codec.code().k()), (63, 36));
        assert_eq!(codec.padding_bits(), 16);
        assert_eq!(select_code(1).unwrap().k(), 16);
        assert_eq!(select_code(37).unwrap().k(), 51);
        assert!(matches!(select_code(65), Err(Error::UnsupportedMessageLength(65))));
        assert!(select_code(0).is_err());
    }

    #[test]
    fn unsupported_field_and_parameters() {
        assert!(BchCode::new(8, 100, 5).is_err());
        assert!(BchCode::new(5, 20, 7).is_err());
        assert!(BchCode::new(5, 31, 3).is_err());
    }

    #[test]
    fn zero_message_gives_zero_codeword() {
        for b in [16, 32, 48, 64] {
            let c = select_code(b).unwrap();
            assert!(c.encode(&vec![false; c.k()]).unwrap().iter().all(|&x| !x));
        }
    }

    #[test]
    fn encoding_is_systematic_linear_and_divisible() {
        let mut r = rng::seeded(1);
        for b in [16, 32, 48, 64] {
            let c = select_code(b).unwrap();
            let g = c.generator();
            for _ in 0..50 {
                let m1 = random_bits(&mut r, c.k());
                let m2 = random_bits(&mut r, c.k());
                let c1 = c.encode(&m1).unwrap();
                let c2 = c.encode(&m2).unwrap();
                assert_eq!(c.systematic_bits(&c1), m1);
                assert!(remainder_oracle(&c1, &g).iter().all(|&x| !x));
                let sum: Vec<bool> = c1.iter().zip(&c2).map(|(a, b)| a ^ b).collect();
                assert!(c.is_codeword(&sum));
                assert!(remainder_oracle(&sum, &g).iter().all(|&x| !x));
            }
        }
    }

    #[test]
    fn message_too_long_is_rejected() {
        let c = select_code(16).unwrap();
        assert!(matches!(c.encode(&[false; 17]), Err(Error::Length { .. })));
        assert!(c.decode(&[false; 30]).is_err());
    }

    #[test]
    fn clean_channel_decodes_with_zero_corrections() {
        let mut r = rng::seeded(2);
        for b in [16, 32, 48, 64] {
            let c = select_code(b).unwrap();
            let m = random_bits(&mut r, c.k());
            let d = c.decode(&c.encode(&m).unwrap()).unwrap();
            assert_eq!((d.message, d.corrected), (m, 0));
        }
    }

    #[test]
    fn bch_63_36_corrects_every_double_error() {
        let c = select_code(32).unwrap();
        let mut r = rng::seeded(3);
        for _ in 0..10 {
            let m = random_bits(&mut r, c.k());
            let cw = c.encode(&m).unwrap();
            for i in 0..63 {
                for j in i + 1..63 {
                    let mut w = cw.clone();
                    w[i] ^= true;
                    w[j] ^= true;
                    let d = c.decode(&w).unwrap();
                    assert_eq!((&d.message, d.corrected), (&m, 2));
                }
            }
        }
    }

    #[test]
    fn bch_127_corrects_ten_errors() {
        let c = select_code(64).unwrap();
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let m = random_bits(&mut r, 64);
            let mut w = c.encode(&m).unwrap();
            let weight = r.random_range(0..=10);
            let mut flipped = std::collections::BTreeSet::new();
            while flipped.len() < weight {
                flipped.insert(r.random_range(0..127));
            }
            for &i in &flipped {
                w[i] ^= true;
            }
            let d = c.decode(&w).unwrap();
            assert_eq!((d.message, d.corrected), (m, weight));
        }
    }

    #[test]
    fn beyond_capability_fails_or_lands_far_away() {
        let c = select_code(16).unwrap();
        let mut r = rng::seeded(5);
        let mut failures = 0;
        for _ in 0..2000 {
            let m = random_bits(&mut r, 16);
            let cw = c.encode(&m).unwrap();
            let mut w = cw.clone();
            let mut flipped = std::collections::BTreeSet::new();
            while flipped.len() < 4 {
                flipped.insert(r.random_range(0..31));
            }
            for &i in &flipped {
                w[i] ^= true;
            }
            match c.decode(&w) {
                Err(Error::DecodeFailure { t: 3 }) => failures += 1,
                Err(e) => panic!("unexpected error {e}"),
                Ok(d) => {
                    let dist = d.codeword.iter().zip(&cw).filter(|(a, b)| a != b).count();
                    assert!(dist >= c.d() - 4 && d.message != m);
                }
            }
        }
        assert!(failures > 0);
    }

    #[test]
    fn random_codewords_respect_minimum_distance() {
        let mut r = rng::seeded(6);
        for b in [16, 48] {
            let c = select_code(b).unwrap();
            let words: Vec<u128> = (0..2000)
                .map(|_| to_poly(&c.encode(&random_bits(&mut r, c.k())).unwrap()))
                .collect();
            for (i, a) in words.iter().enumerate() {
                for w in &words[i + 1..] {
                    if a != w {
                        assert!((a ^ w).count_ones() as usize >= c.d());
                    }
                }
            }
        }
    }

    #[test]
    fn codec_strips_padding_and_rejects_nonzero_padding() {
        let codec = MessageCodec::for_message_bits(20).unwrap();
        let msg: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let p = codec.encode(&msg).unwrap();
        assert_eq!(codec.decode(&p.codeword).unwrap(), (msg.clone(), 0));
        assert_eq!(codec.raw_message(&p.codeword), msg);
        let bad = codec.code().encode(&[true; 36]).unwrap();
        assert!(codec.decode(&bad).is_err());
        assert!(codec.encode(&msg[..19]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_any_message(bits in proptest::collection::vec(any::<bool>(), 64), which in 0usize..4) {
            let b = [16, 32, 48, 64][which];
            let codec = MessageCodec::for_message_bits(b).unwrap();
            let msg = &bits[..b];
            let p = codec.encode(msg).unwrap();
            prop_assert_eq!(codec.decode(&p.codeword).unwrap(), (msg.to_vec(), 0));
        }
    }
}
