//! Stable seed derivation. Every random draw in the engine is rooted in a
//! seed produced here, so results never depend on thread scheduling or on
//! the standard library's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed, a label and an index.
pub fn derive(master: u64, label: &str, index: u64) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, label.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, &index.to_le_bytes());
    mix64(h)
}

/// Seed for one node execution within a rollout.
pub fn node_seed(master: u64, node_id: &str, step: u32) -> u64 {
    derive(master, node_id, u64::from(step))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_separating() {
        // Frozen against an independent reimplementation; changing the
        // derivation silently changes every golden file.
        assert_eq!(node_seed(42, "n1", 0), 3_098_190_990_524_872_443);
        assert_eq!(derive(7, "schedule", 3), 16_944_174_639_909_922_730);
        assert_ne!(node_seed(0, "a", 0), node_seed(0, "b", 0));
        assert_ne!(node_seed(0, "a", 0), node_seed(0, "a", 1));
        assert_ne!(node_seed(0, "a", 0), node_seed(1, "a", 0));
        // label/index boundary must not alias
        assert_ne!(derive(0, "ab", 0), derive(0, "a", u64::from(b'b')));
    }
}
