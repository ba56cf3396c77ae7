//! Seeded random streams.
//!
//! Every stochastic choice in the crate goes through [`ChaCha8Rng`], which
//! produces the same sequence on every platform. Independent streams for
//! parallel runs are derived from a master seed by hashing the stream path
//! with SplitMix64.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as CopperRng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the stream addressed by `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> CopperRng {
    CopperRng::seed_from_u64(derive_seed(master, path))
}
