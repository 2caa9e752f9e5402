//! Seeding and stream splitting.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded through
//! [`SeedableRng::seed_from_u64`]. ChaCha output is specified independently of
//! platform and word size, so a seed reproduces the same bits everywhere.
//! Gaussian variates use `rand_distr::StandardNormal` (ziggurat), which is a
//! deterministic transform of the uniform stream.
//!
//! Child streams are derived with [`mix`], the SplitMix64 finalizer applied to
//! `parent + GOLDEN * (index + 1)`. A run's seed therefore depends only on the
//! master seed and the run index, never on execution order.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags used when one run needs several independent generators.
pub mod stream {
    pub const INJECT: u64 = 0x1;
    pub const LAYERS: u64 = 0x2;
    pub const ESTIMATE: u64 = 0x3;
    pub const OPTIMIZE: u64 = 0x4;
    pub const INIT: u64 = 0x5;
    pub const DATA: u64 = 0x6;
    pub const SHUFFLE: u64 = 0x7;
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `index` from `parent`.
#[inline]
pub fn mix(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for child stream `index` of `parent`.
pub fn child_rng(parent: u64, index: u64) -> ChaCha8Rng {
    rng_from(mix(parent, index))
}
