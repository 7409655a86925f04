//! Seed derivation.
//!
//! Every random stream in the toolkit is derived from one global seed plus a
//! purpose tag and a key (sample id, epoch, replica, ...). Derivation hashes
//! the inputs with SHA-256, so streams are stable across platforms and
//! independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(global: u64, tag: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn derive_seed_n(global: u64, tag: &str, n: u64) -> u64 {
    derive_seed(global, tag, &n.to_string())
}

pub fn rng_for(global: u64, tag: &str, key: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(global, tag, key))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stable 64-bit hash of a string, used for tie-breaking.
pub fn stable_hash(s: &str) -> u64 {
    derive_seed(0, "hash", s)
}
