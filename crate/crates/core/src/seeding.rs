//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a
//! `(seed, domain)` pair and selected by a 64-bit counter, so results never
//! depend on thread scheduling or on the order in which work is visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with a domain tag into an independent seed.
#[inline]
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    mix64(mix64(seed) ^ domain.rotate_left(17) ^ 0xD1B5_4A32_D192_ED03)
}

/// Random stream `counter` of the generator keyed by `(seed, domain)`.
pub fn stream(seed: u64, domain: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, domain));
    rng.set_stream(counter);
    rng
}

/// Domain tags. Distinct tags give statistically independent streams.
pub mod domain {
    pub const ASSIGNMENT: u64 = 1;
    pub const ACTIONS: u64 = 2;
    pub const STATES: u64 = 3;
    pub const BASELINE: u64 = 4;
    pub const COUNTERFACTUAL: u64 = 0x100;
    pub const SPLIT: u64 = 0x200;
    pub const INIT: u64 = 0x300;
    pub const SHUFFLE: u64 = 0x301;
    pub const SAMPLE: u64 = 0x302;
    pub const FOLDS: u64 = 0x400;
    pub const DOWNSAMPLE: u64 = 0x500;
    pub const RUN: u64 = 0x600;
}
