//! Seed derivation. One run-level seed fans out into named sub-streams
//! (corpus, draft, features, sessions) so components stay independently
//! reproducible.

use crate::types::fnv1a64;

/// Derives a child seed from a root seed and a stream label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + label.len());
    bytes.extend_from_slice(&root.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    splitmix64(fnv1a64(&bytes))
}

/// Mixes arbitrary components into one seed. Used for counter-based noise
/// streams keyed by (model seed, utterance, position).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    splitmix64(fnv1a64(&bytes))
}

pub fn hash_str(s: &str) -> u64 {
    fnv1a64(s.as_bytes())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
