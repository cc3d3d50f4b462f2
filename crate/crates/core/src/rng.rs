//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is
//! derived from a master seed plus a path of integer labels (capture index,
//! window index, sensor id, round, ...). Streams never depend on the order in
//! which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a sequence of labels.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &label| splitmix(acc ^ splitmix(label)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// Domain tags so unrelated streams with equal numeric paths never collide.
pub mod tag {
    pub const CAPTURE: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const FAULT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const FOLD: u64 = 5;
    pub const SPLIT: u64 = 6;
}
