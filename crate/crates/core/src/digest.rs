//! Stable hashing helpers: config digests, sub-seed derivation, index mixing.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("digest input serializes");
    hex(&Sha256::digest(&bytes))
}

/// Short hex digest of a point in the search space (first 16 hex chars).
pub fn digest_point(point: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in point {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hex(&hasher.finalize()[..8])
}

/// Named sub-stream of a base seed.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn hash_words(seed: u64, words: &[i64]) -> u64 {
    words.iter().fold(mix64(seed), |h, &w| mix64(h ^ (w as u64)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
