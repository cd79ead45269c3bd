//! Counter-based mixing and seeded bit streams.
//!
//! Everything random in the crate is a pure function of a 64-bit seed plus
//! some integer coordinates. Keyed draws go through [`keyed`], sequential
//! draws through [`BitStream`] / [`seeded_rng`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed pseudorandom word for the address `words` under `seed`.
#[inline]
pub fn keyed(seed: u64, words: &[u64]) -> u64 {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    for &w in words {
        h = mix64(h.rotate_left(23) ^ w.wrapping_mul(GOLDEN)).wrapping_add(GOLDEN);
    }
    mix64(h)
}

/// Seed of the `index`-th run of an ensemble.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    keyed(master, &[0x5EED, index])
}

/// Uniform on (0, 1] from a random word.
#[inline]
pub fn unit_open_closed(w: u64) -> f64 {
    ((w >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Exponential(1) variate from a random word.
#[inline]
pub fn exp1(w: u64) -> f64 {
    -unit_open_closed(w).ln()
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fair bits drawn 64 at a time from a ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct BitStream {
    rng: ChaCha8Rng,
    buf: u64,
    left: u32,
}

impl BitStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: seeded_rng(seed), buf: 0, left: 0 }
    }

    #[inline]
    pub fn bit(&mut self) -> bool {
        if self.left == 0 {
            self.buf = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.buf & 1 == 1;
        self.buf >>= 1;
        self.left -= 1;
        b
    }

    /// Rademacher step, `+1` or `-1`.
    #[inline]
    pub fn sign(&mut self) -> i64 {
        if self.bit() {
            1
        } else {
            -1
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Simple random walk path of `len` steps (`len + 1` positions) from 0.
pub fn srw_path(seed: u64, len: usize) -> Vec<i64> {
    let mut bits = BitStream::new(seed);
    let mut path = Vec::with_capacity(len + 1);
    let mut s = 0i64;
    path.push(s);
    for _ in 0..len {
        s += bits.sign();
        path.push(s);
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_is_deterministic_and_address_sensitive() {
        assert_eq!(keyed(7, &[1, 2, 3]), keyed(7, &[1, 2, 3]));
        assert_ne!(keyed(7, &[1, 2, 3]), keyed(7, &[1, 2, 4]));
        assert_ne!(keyed(7, &[1, 2, 3]), keyed(8, &[1, 2, 3]));
        assert_ne!(keyed(7, &[1, 2]), keyed(7, &[2, 1]));
    }

    #[test]
    fn unit_interval_bounds() {
        assert!(unit_open_closed(0) > 0.0);
        assert_eq!(unit_open_closed(u64::MAX), 1.0);
    }

    #[test]
    fn bit_stream_is_roughly_fair() {
        let mut b = BitStream::new(3);
        let n = 200_000;
        let ones = (0..n).filter(|_| b.bit()).count() as f64;
        let z = (ones - n as f64 / 2.0) / (n as f64 / 4.0).sqrt();
        assert!(z.abs() < 4.5, "z = {z}");
    }
}
