//! Deterministic RNG stream derivation.
//!
//! Every run owns its streams: a stream is keyed by (master seed, label,
//! index) and hashed through SHA-256 into a ChaCha8 state, so streams for
//! different cells, seeds, or roles (training, evaluation, probing) never
//! collide and never depend on platform hasher state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 32-byte RNG key from (master, label, index).
pub fn derive_key(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0x1f]); // separator so ("ab", 1) and ("a", ?) cannot collide
    hasher.update(label.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// A ChaCha8 stream for the given (master, label, index) triple.
pub fn derive_rng(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(master, label, index))
}
