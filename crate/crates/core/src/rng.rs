//! Seed derivation for reproducible, order-independent randomness.
//!
//! Parallel sections must not share a sequential RNG stream, otherwise
//! results would depend on scheduling. Instead every unit of work derives
//! its own generator from the run seed plus a stable label.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG for `(seed, label)`; independent labels give
/// independent streams.
pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Collapses `(seed, label)` to a sub-seed, for APIs that take a plain u64.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
}
