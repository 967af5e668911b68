//! Deterministic seeded randomness.
//!
//! Every stochastic site in the crate draws from an explicitly threaded
//! [`Rng`]; there is no global randomness. Streams can be split with
//! [`Rng::derive`] / [`Rng::stream`] so that independent sites (dropout in
//! layer 3, the epoch-7 shuffle, the fill noise of sample 12) consume
//! disjoint, order-independent streams. Disabling one site never shifts the
//! draws of another.

/// SplitMix64 generator (`algorithm = "splitmix64/boxmuller-v1"`).
///
/// The same seed produces the same stream on every platform: the state
/// update and output mix are pure 64-bit integer arithmetic, and the float
/// conversions below use fixed 53-bit scaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

/// Identifier persisted in checkpoints so a resume can verify the stream.
pub const RNG_ALGORITHM: &str = "splitmix64/boxmuller-v1";

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Next raw 64-bit word.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes exactly two words.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 + 1.0; // in [1, 2^53], avoids ln(0)
        let u1 = u1 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal truncated to `|x| <= 2 sigma`, resampling out-of-range draws.
    pub fn trunc_normal(&mut self, sigma: f64) -> f64 {
        loop {
            let x = self.normal() * sigma;
            if x.abs() <= 2.0 * sigma {
                return x;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Child generator keyed by `tag`; does not advance `self`.
    pub fn derive(&self, tag: u64) -> Rng {
        Rng {
            state: mix(self.state ^ mix(tag.wrapping_mul(GOLDEN) ^ 0x6a09_e667_f3bc_c909)),
        }
    }

    /// Child generator keyed by a word sequence, e.g. `(branch, layer, site)`.
    pub fn stream(&self, words: &[u64]) -> Rng {
        let mut r = self.clone();
        for &w in words {
            r = r.derive(w);
        }
        r
    }
}
