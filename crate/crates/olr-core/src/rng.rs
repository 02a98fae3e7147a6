//! Seed derivation for reproducible, parallel-safe RNG streams.
//!
//! Every random decision in the pipeline draws from a [`ChaCha8Rng`] seeded
//! through [`derive_seed`], so results depend only on the configured base
//! seed plus a stream label — never on thread scheduling or call order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a base seed, a stream tag and an index
/// (FNV-1a over the three).
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in base.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for b in tag.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(FNV_PRIME);
    }
    for b in index.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Seeded generator for the stream `(base, tag, index)`.
pub fn stream_rng(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(2, "a", 0));
    }

    #[test]
    fn streams_are_reproducible() {
        use rand::Rng;
        let a: Vec<u32> = stream_rng(7, "x", 3).random_iter().take(4).collect();
        let b: Vec<u32> = stream_rng(7, "x", 3).random_iter().take(4).collect();
        assert_eq!(a, b);
        let mut r = stream_rng(7, "x", 4);
        assert_ne!(a[0], r.random::<u32>());
    }
}
