//! Deterministic seed derivation and stable content hashing.
//!
//! Every random stream in the crate is keyed by an explicit chain of
//! integers through [`mix64`], so parallel execution order can never
//! change outputs and replays are bit-identical on any platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a chain of parts into one 64-bit seed.
pub fn mix64(parts: &[u64]) -> u64 {
    let mut state = 0x6d61_726b_6574_7369u64; // arbitrary fixed tag
    for &p in parts {
        state = splitmix64(state ^ p);
    }
    state
}

/// FNV-1a over raw bytes; used for content fingerprints and for folding
/// strings into seed chains.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

pub fn hash_str(s: &str) -> u64 {
    fnv1a64(s.as_bytes())
}

pub fn hash_hex(s: &str) -> String {
    format!("{:016x}", hash_str(s))
}

/// Seeded ChaCha8 stream for the given key chain.
pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(parts))
}
