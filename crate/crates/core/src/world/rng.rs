//! Seed derivation for every stochastic stage.
//!
//! Streams are ChaCha8 generators keyed by a SplitMix64 mix of a master seed
//! and a stage tag, so stages never share random state and any one of them can
//! be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `seed` for the numbered `stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD605_BBB5_8C8A_BBB5))
}

/// Child seed for a named stage.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let tag = stage
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    derive_seed(seed, tag)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}
