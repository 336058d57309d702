//! Seeded random streams. Every stochastic step derives its own generator
//! from a global seed and a tuple of indices, so results never depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a seed and a list of stream indices.
pub fn stream_seed(seed: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(mix64(seed), |h, &i| mix64(h ^ mix64(i)))
}

pub fn stream(seed: u64, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(stream_seed(seed, indices))
}
