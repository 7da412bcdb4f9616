//! Stable hashes used for feature hashing and artifact fingerprints.
//!
//! Feature hashing uses FNV-1a (64-bit) so that hashed bins are reproducible
//! across platforms and releases. Artifact fingerprints (featurizer configs,
//! checkpoint integrity, run manifests) use SHA-256 truncated to a hex prefix.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Full SHA-256 hex digest.
pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Short (16 hex chars) SHA-256 fingerprint, used for config hashes.
pub fn fingerprint(data: &[u8]) -> String {
    sha256_hex(data)[..16].to_string()
}
