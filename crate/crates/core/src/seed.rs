//! Stable seed derivation. `std`'s hasher is not stable across releases, so
//! per-item seeds are taken from SHA-256 instead.

use sha2::{Digest, Sha256};

/// Derives a child seed from a global seed and a string key (e.g. an utterance id).
pub fn derive_seed(global: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
