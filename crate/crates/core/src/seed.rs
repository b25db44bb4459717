//! Stable seed derivation. Every stochastic draw in the crate is keyed by
//! `(top-level seed, purpose, indices)`, so results do not depend on the order
//! jobs are scheduled in.

use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
