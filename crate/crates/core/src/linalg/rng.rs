//! Seeded, stream-addressable randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`]. A generator is
//! fully determined by `(seed, stream_id)`; ChaCha8 keeps the sequence
//! identical across platforms. Sub-streams for a module or a sample are
//! derived with [`SeededRng::derive`] so that parallel and serial runs see
//! the same numbers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stable module identifiers used when deriving streams.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const ATTACK: u64 = 4;
    pub const POWER_ITERATION: u64 = 5;
    pub const HUTCHINSON: u64 = 6;
    pub const LIPSCHITZ: u64 = 7;
    pub const DETECTOR: u64 = 8;
    pub const ORACLE: u64 = 9;
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer; used only to mix stream coordinates.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh generator for `(seed, module_id, sample_id)`. Independent of how
    /// many values have already been drawn from `self`.
    pub fn derive(&self, module_id: u64, sample_id: u64) -> SeededRng {
        let stream = mix(mix(self.stream_id ^ mix(module_id)) ^ sample_id);
        SeededRng::new(self.seed, stream)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// ±1 with equal probability.
    pub fn rademacher(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
