//! Seed plumbing. Every random draw in the crate comes from a `ChaCha8Rng`
//! seeded through [`derive_seed`], so runs are reproducible bitwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream tag (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Stream tags, so that changing one consumer never shifts another's draws.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const LABEL_NOISE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TASKS: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const CLUSTER: u64 = 7;
    pub const PROBE: u64 = 8;
}
