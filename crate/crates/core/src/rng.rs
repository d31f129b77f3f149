//! Deterministic pseudorandom streams.
//!
//! Every random draw in the crate (parameter init, epoch shuffles, synthetic
//! data, splits) comes from [`Generator`], which is xoshiro256++ seeded from a
//! 64-bit seed through SplitMix64. Both algorithms are fixed integer
//! recurrences, so a seed yields the same stream on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generator {
    inner: Xoshiro256PlusPlus,
}

/// Build the generator for `seed`.
pub fn set_seed(seed: u64) -> Generator {
    Generator {
        inner: Xoshiro256PlusPlus::seed_from_u64(seed),
    }
}

impl Generator {
    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[low, high)`.
    pub fn uniform_in(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }
}
