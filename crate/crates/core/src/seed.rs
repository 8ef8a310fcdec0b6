//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by a tuple of integers (run seed,
//! step, candidate, student, ...). Streams for distinct tuples are
//! independent for practical purposes and never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer: a bijective avalanche on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path of integers into one seed. Order and length both matter.
pub fn derive_seed(path: &[u64]) -> u64 {
    let mut h = mix64(path.len() as u64 ^ 0x5eed_0000_0000_0000);
    for &p in path {
        h = mix64(h ^ mix64(p));
    }
    h
}

/// A ChaCha8 generator seeded from `derive_seed(path)`.
pub fn rng_for(path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(path))
}
