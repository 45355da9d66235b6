//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by a base seed and
//! a path of labels (epoch, direction, item id, ...), so per-item work can be
//! reordered or parallelised without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a path of labels into a new 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(base: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Labels used as the first path element so that unrelated consumers never share a stream.
pub mod label {
    pub const WORLD: u64 = 1;
    pub const ENCODER: u64 = 2;
    pub const AGENT_INIT: u64 = 3;
    pub const DIRECTION: u64 = 4;
    pub const UPDATE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const DIAGNOSTIC: u64 = 7;
    pub const PAIRED_MHCG: u64 = 8;
}
