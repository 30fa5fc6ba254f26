//! Deterministic seed derivation.
//!
//! Every randomized component draws from its own stream derived from the run
//! seed, a purpose tag, and an index. Components therefore consume rng state
//! independently: adding draws in one place never shifts another component's
//! stream.

use sha2::{Digest, Sha256};

/// Derives a child seed from `(base, tag, index)` via SHA-256.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
