//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream seeded
//! through this module, so a run is a pure function of its configured seeds
//! regardless of platform or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from a master seed, a stream label, and an index.
pub fn derive(master: u64, stream: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stream.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Stable 64-bit digest of a text, for content-keyed randomness.
pub fn text_digest(text: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seeded RNG used throughout the pipeline.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
