//! Seeding utilities.
//!
//! All stochastic components take an explicit RNG so that every run is a
//! pure function of its seed. We use ChaCha8 as the generator (fast, stable
//! across platforms and releases) and SplitMix64 to derive independent child
//! seeds, e.g. one per episode, so results do not depend on scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Builds the root RNG for a run.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 step: maps an arbitrary 64-bit value to a well-mixed one.
///
/// This is the standard constant set from Steele et al.'s SplitMix; it is
/// bijective, so distinct inputs never collide.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a stream index.
///
/// Used for per-episode and per-component streams so that, e.g., episode `i`
/// of a demonstration run is reproducible in isolation regardless of how many
/// episodes ran before it.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Convenience: child RNG for `(seed, stream)`.
pub fn child_rng(seed: u64, stream: u64) -> Rng {
    rng_from_seed(derive_seed(seed, stream))
}
