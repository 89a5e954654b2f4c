//! Reproducible random streams.
//!
//! Every consumer of randomness gets its own [`Stream`] derived from a master
//! seed and a path of integer tags (trial index, arm, batch index, ...). Two
//! streams with different paths are statistically independent, and the same
//! path always yields the same stream, regardless of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Tags separating the consumers of one trial seed.
pub mod tag {
    pub const DATA: u64 = 0x6461_7461;
    pub const MASK: u64 = 0x6d61_736b;
    pub const MODEL: u64 = 0x6d6f_6465;
    pub const TRIAL: u64 = 0x7472_6961;
}

// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of tags.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

/// A stream for `seed` followed by `path`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, path))
}
