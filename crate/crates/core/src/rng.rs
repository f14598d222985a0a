//! Seeded stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha generator keyed by a
//! (seed, tag, index) triple. Streams are independent of evaluation order,
//! so the same seed reproduces the same design no matter which subsets are
//! requested or how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse a (seed, tag, index) triple into one 64-bit stream key.
pub fn derive_key(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// Generator for the given triple.
pub fn stream_rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, tag, index))
}
