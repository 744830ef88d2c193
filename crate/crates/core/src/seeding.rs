//! Derived RNG streams so every random step is a pure function of its inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with stream identifiers (purpose tag, cycle index, ...).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

pub(crate) mod stream {
    pub const BOOTSTRAP: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const REFILL: u64 = 4;
    pub const FALLBACK: u64 = 5;
    pub const METRICS: u64 = 6;
    pub const PROBE: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const CORPUS: u64 = 9;
}
