//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is a pure function of the run seed plus
//! a fixed stream tag, so runs replay bit-identically regardless of how many
//! streams a stage consumes.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// splitmix64 finalizer; good avalanche, stable forever.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a list of stream tags.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut s = mix(base);
    for &t in tags {
        s = mix(s ^ t);
    }
    s
}

/// A ChaCha stream for the given base seed and tags.
pub fn rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}

/// Stream tags used across the crate. Values are arbitrary but frozen:
/// changing one changes every derived run.
pub mod stream {
    pub const MODEL_INIT: u64 = 0x01;
    pub const EPOCH_SHUFFLE: u64 = 0x02;
    pub const AUGMENT: u64 = 0x03;
    pub const SPLIT_VIDEOS: u64 = 0x04;
    pub const SYNTH: u64 = 0x05;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive(42, &[1, 2]), derive(42, &[1, 2]));
        assert_ne!(derive(42, &[1, 2]), derive(42, &[2, 1]));
        assert_ne!(derive(42, &[1]), derive(43, &[1]));
    }

    #[test]
    fn rng_streams_replay() {
        use rand::Rng;
        let a: f64 = rng(7, &[stream::AUGMENT, 3]).random();
        let b: f64 = rng(7, &[stream::AUGMENT, 3]).random();
        assert_eq!(a, b);
    }
}
