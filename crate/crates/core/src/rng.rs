//! Named, independently seeded random streams.
//!
//! Every random draw in the crate comes from a [`Stream`] keyed by a master
//! seed and a path of labels, so adding draws to one stream never shifts
//! another and task scheduling cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes used as the first key component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Instance = 1,
    DemandModel = 2,
    Covariates = 3,
    Errors = 4,
    Evaluation = 5,
    Correlation = 6,
    Calibration = 7,
    Folds = 8,
    Query = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of keys into a new 64-bit seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k.wrapping_add(0x5851_f42d_4c95_7f2d))))
}

/// Builds the RNG for `(seed, purpose, keys...)`.
pub fn stream(seed: u64, purpose: Purpose, keys: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(keys.len() + 1);
    all.push(purpose as u64);
    all.extend_from_slice(keys);
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &all))
}
