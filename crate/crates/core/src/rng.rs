//! Seed derivation for every random draw in the crate.
//!
//! There is no global generator. Each consumer derives a 64-bit key from a
//! base seed plus a tuple of counters (epoch, iteration, parameter index...)
//! with [`mix_seed`], then keys a ChaCha8 stream cipher with it. ChaCha is a
//! counter-based generator, so the values a consumer sees depend only on its
//! key, never on what was drawn elsewhere or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a base seed and any number of counters into one well-mixed key.
pub fn mix_seed(seed: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Stream for a derived key.
pub fn stream(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}
