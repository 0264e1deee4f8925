//! Deterministic sub-seed derivation.
//!
//! A single base seed expands into independent streams (member init,
//! shuffling, exploration, bootstrap) by hashing the base with a stream tag
//! and an index path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_EXPLORE: u64 = 3;
pub const STREAM_BOOTSTRAP: u64 = 4;
pub const STREAM_SAMPLE_STATES: u64 = 5;
pub const STREAM_CORPUS: u64 = 6;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed, a stream tag and an index path.
pub fn derive(base: u64, stream: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(base ^ splitmix(stream));
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
