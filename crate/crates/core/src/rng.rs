//! Deterministic, splittable random streams.
//!
//! A [`StreamKey`] names a stream by a root seed and a path of
//! `(label, index)` steps. The path is folded into a 128-bit digest, and the
//! stream itself is ChaCha8 keyed by `(root, digest)`, so generation is a pure
//! function of the key and a local counter. Work items that derive their own
//! key from their index produce the same numbers under any schedule.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    root: u64,
    digest: [u64; 2],
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn fmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl StreamKey {
    pub fn new(root: u64) -> Self {
        StreamKey {
            root,
            digest: [fmix64(root ^ GOLDEN), fmix64(root.wrapping_add(GOLDEN).rotate_left(17))],
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// A 64-bit seed summarizing the whole path, for APIs that take a plain
    /// seed (e.g. [`crate::attack::AttackConfig`]).
    pub fn seed(&self) -> u64 {
        fmix64(self.digest[0] ^ self.digest[1].rotate_left(31))
    }

    /// Child key for step `(label, index)`. Order of steps matters.
    pub fn derive(&self, label: &str, index: u64) -> StreamKey {
        let step = fmix64(fnv1a(label) ^ fmix64(index.wrapping_add(GOLDEN)));
        let d0 = fmix64(self.digest[0] ^ step);
        let d1 = fmix64(self.digest[1].wrapping_add(step.rotate_left(29)) ^ d0);
        StreamKey {
            root: self.root,
            digest: [d0, d1],
        }
    }

    /// Shorthand for `derive(label, index as u64)`.
    pub fn child(&self, label: &str, index: usize) -> StreamKey {
        self.derive(label, index as u64)
    }

    pub fn stream(&self) -> Stream {
        let mut seed = [0u8; 32];
        let words = [
            self.root,
            self.digest[0],
            self.digest[1],
            fmix64(self.root ^ self.digest[0] ^ self.digest[1].rotate_left(7)),
        ];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        Stream {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }
}

/// A random stream produced from a [`StreamKey`].
#[derive(Clone, Debug)]
pub struct Stream {
    inner: ChaCha8Rng,
}

impl Stream {
    /// Uniform in `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn next_uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    pub fn next_gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// ±1 with equal probability.
    pub fn next_sign(&mut self) -> f64 {
        if self.inner.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_gaussian()).collect()
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
