//! Deterministic seed derivation.
//!
//! Every random stream in an experiment is seeded by
//! `derive_seed(master, &[stream, index, ...])`: the master seed and each
//! counter are folded through the SplitMix64 finalizer in order. Distinct
//! counter paths give statistically independent seeds, and the result does
//! not depend on evaluation order, so trials can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SIGNAL: u64 = 1;
pub const STREAM_MASK: u64 = 2;
pub const STREAM_CORPUS: u64 = 3;
pub const STREAM_SUPPORT: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
