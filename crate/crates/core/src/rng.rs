//! Seeded random streams.
//!
//! All sampling uses [`ChaCha8Rng`] with an explicit seed. Independent streams
//! for parallel work are derived with [`derive_seed`], which folds each index
//! into the base seed through the SplitMix64 finalizer:
//!
//! ```text
//! s = base
//! for i in indices: s = splitmix64(s ^ splitmix64(i + 0x9E3779B97F4A7C15))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(base, |s, &i| splitmix64(s ^ splitmix64(i.wrapping_add(0x9E37_79B9_7F4A_7C15))))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
