//! Deterministic seed derivation.
//!
//! Every stochastic component gets its own substream derived from one base
//! seed, so adding draws to one component never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives independent sub-seeds from a base seed and a role tag.
///
/// The mix is splitmix64 over `base ^ (tag + phi)`, which is stable across
/// platforms and releases of this crate.
#[derive(Debug, Clone, Copy)]
pub struct SeedStream {
    base: u64,
}

impl SeedStream {
    pub fn new(base: u64) -> Self {
        Self { base }
    }

    pub fn derive(&self, tag: u64) -> u64 {
        splitmix64(self.base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    pub fn rng(&self, tag: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(tag))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Role tags for the sub-streams used by the optimizers and the harness.
pub mod tags {
    pub const VAE_POOL: u64 = 1;
    pub const VAE_INIT: u64 = 2;
    pub const VAE_TRAIN: u64 = 3;
    pub const INITIAL_DESIGN: u64 = 4;
    pub const GP_FIT: u64 = 5;
    pub const ACQUISITION: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const EMBEDDING: u64 = 8;
    pub const RETRAIN: u64 = 9;
    pub const ORTHOGONAL: u64 = 10;
}
