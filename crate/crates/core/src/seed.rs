//! Labeled seed derivation.
//!
//! Every stochastic component draws from a ChaCha stream keyed by a seed
//! derived from one master seed and a label path, so a single number
//! reproduces an entire experiment and independent components never share a
//! stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `parent` and a label.
pub fn derive(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Derive a child seed from `parent`, a label and an ordinal.
pub fn derive_indexed(parent: u64, label: &str, index: u64) -> u64 {
    derive(derive(parent, label), &index.to_string())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hex SHA-256 of a byte string.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
