//! Seed plumbing. Every random choice in the crate is drawn from a ChaCha
//! stream whose seed is derived from a root seed plus a label, so that runs
//! are reproducible and independent streams never alias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed from `(seed, label, index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update((label.len() as u32).to_be_bytes());
    h.update(label.as_bytes());
    h.update(index.to_be_bytes());
    let out = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    u64::from_be_bytes(first)
}

pub fn derived(seed: u64, label: &str, index: u64) -> SimRng {
    seeded(derive_seed(seed, label, index))
}
