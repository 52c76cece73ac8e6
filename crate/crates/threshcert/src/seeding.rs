//! Splittable counter-style seed derivation so parallel execution
//! cannot reorder randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer over (seed, index).
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-task RNG derived from a root seed and a task index.
pub fn rng_for(seed: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, index))
}
