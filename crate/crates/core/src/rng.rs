//! Seeded, language-portable randomness.
//!
//! Everything that must be bit-reproducible across implementations goes through
//! a SplitMix64 stream. The shuffle index rule and the normal generator are
//! spelled out here rather than delegated to `rand`, whose sampling algorithms
//! are allowed to change between releases.

use std::f64::consts::TAU;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(bytes);
    hasher.finish()
}

/// A SplitMix64 stream whose state is initialised to `seed` verbatim.
#[derive(Debug, Clone)]
pub struct SeededStream {
    inner: SplitMix64,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform index in `0..bound` via the high half of a 128-bit product.
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((u128::from(self.next_u64()) * bound as u128) >> 64) as usize
    }

    /// Uniform double in `(0, 1]`, 53 bits of precision.
    pub fn next_open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate from Box-Muller, cosine branch only.
    ///
    /// Consumes exactly two draws per call so that sample `i` of a stream
    /// never depends on how earlier samples were used.
    pub fn next_standard_normal(&mut self) -> f64 {
        let u1 = self.next_open_unit();
        let u2 = self.next_open_unit();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle: for `i` from `n-1` down to 1, swap
    /// `items[i]` with `items[j]`, `j = next_index(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}
