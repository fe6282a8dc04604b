//! Deterministic seed splitting.
//!
//! Every random stream in a run is derived from the master seed and a path of
//! integers naming the stream (trial index, split index, purpose tag). Adding
//! a trial or a split never changes the seeds of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for [`derive_seed`].
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCHES: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const PERTURBATION: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const COHORT: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `seed_{i+1} = splitmix64(seed_i ^ splitmix64(path_i))`, folded over `path`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
