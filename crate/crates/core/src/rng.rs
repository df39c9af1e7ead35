//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed and a path of stream tags, so results do not depend on
//! the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &tag| splitmix(acc ^ splitmix(tag)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags used across the crate.
pub mod tags {
    pub const CATALOG: u64 = 1;
    pub const RENDER: u64 = 2;
    pub const BACKBONE_INIT: u64 = 3;
    pub const PROMPT_INIT: u64 = 4;
    pub const HEAD_INIT: u64 = 5;
    pub const PRETRAIN: u64 = 6;
    pub const SCHEDULE: u64 = 7;
    pub const SPLIT: u64 = 8;
}
