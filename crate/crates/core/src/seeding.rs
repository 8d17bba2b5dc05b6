//! Deterministic RNG streams derived from the run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `path` under `base`.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}

/// Stream labels, so unrelated consumers never share a path.
pub mod label {
    pub const NETWORK: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const UPDATE: u64 = 3;
    pub const EVALUATION: u64 = 4;
    pub const MATCH: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
}
