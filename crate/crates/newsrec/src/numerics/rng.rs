//! Deterministic counter-based random number generator.
//!
//! All stochastic pieces of the pipeline (initialization, Gibbs sampling,
//! neighbor sampling, dropout, shuffling, negative sampling) draw from this
//! generator so that a fixed seed reproduces a run bit-for-bit. The state is
//! just `(seed, counter)`: draw `n` is a hash of the pair, so identical
//! seeds plus identical call sequences yield identical streams, and
//! independent sub-streams for parallel workers are derived by hashing a
//! stream id into a fresh seed.

use crate::numerics::Real;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizer from the splitmix64 generator; decorrelates consecutive
/// counter values.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG with an explicit `(seed, counter)` state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    /// Seed this generator was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit draws made so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Derive an independent generator for a parallel worker or a distinct
    /// sampling role. Derivation depends only on `(seed, stream)`, never on
    /// the counter, so workers get stable streams regardless of how much
    /// the parent has drawn.
    pub fn derive(&self, stream: u64) -> RngState {
        RngState {
            seed: mix64(self.seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.seed
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> Real {
        ((self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)) as Real
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0, "below(0) is undefined");
        // Multiply-shift bounded draw; bias is negligible for 64-bit draws.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw via Box-Muller. Uses two raw draws per call and
    /// keeps no carry state, so the `(seed, counter)` pair stays the full
    /// description of the generator.
    pub fn normal(&mut self) -> Real {
        loop {
            let u1 = self.uniform();
            let u2 = self.uniform();
            if u1 > 0.0 {
                let r = (-2.0 * (u1 as f64).ln()).sqrt();
                let theta = 2.0 * std::f64::consts::PI * u2 as f64;
                return (r * theta.cos()) as Real;
            }
        }
    }

    /// Gaussian draw with the given mean and standard deviation.
    pub fn gaussian(&mut self, mean: Real, std: Real) -> Real {
        mean + std * self.normal()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Sample from an unnormalized non-negative weight vector. Returns the
    /// index of the chosen weight; ties on the cumulative boundary resolve
    /// toward the earlier index.
    pub fn categorical(&mut self, weights: &[Real]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: Real = weights.iter().sum();
        debug_assert!(total > 0.0, "categorical weights must have positive mass");
        let mut target = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                return i;
            }
            target -= *w;
        }
        weights.len() - 1
    }
}
