//! Reproducible random streams.
//!
//! Every simulation owns one ChaCha8 stream. Ensemble member `k` of a run with
//! root seed `r` is seeded with [`derive_seed`]`(r, k)`, a SplitMix64 mix of
//! the pair, so each member can be replayed alone and results never depend on
//! which worker ran which member.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of simulation `index` under root seed `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ index.wrapping_mul(GOLDEN_GAMMA))
}

pub fn sim_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
