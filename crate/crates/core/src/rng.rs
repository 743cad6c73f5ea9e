//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from one root seed, split hierarchically
//! per stage (generation, clustering restart, update step, ...) so that runs
//! are reproducible bit-for-bit and stages can be re-run in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stage label.
pub fn derive(parent: u64, label: u64) -> u64 {
    mix(parent ^ mix(label))
}

/// Derive a child seed from a parent seed and a named stage.
pub fn derive_named(parent: u64, name: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    derive(parent, h)
}

/// Stream cipher RNG: portable, reproducible given the seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
