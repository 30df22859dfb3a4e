//! Seeded random number streams.
//!
//! Every run derives its generators from a single `u64` seed plus a purpose
//! tag, so changing how one component consumes randomness never shifts the
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DekiRng = ChaCha8Rng;

/// Purpose tags for [`sub_rng`].
pub mod purpose {
    pub const GROUND_TRUTH: u64 = 1;
    pub const COEFFICIENT_FIELD: u64 = 2;
    pub const ENSEMBLE: u64 = 3;
    pub const STREAM: u64 = 4;
    pub const REFERENCE: u64 = 5;
    pub const WARMUP: u64 = 6;
    pub const PERTURBATION: u64 = 7;
    pub const CHAIN: u64 = 8;
    pub const FIXED_POINTS: u64 = 9;
    pub const REFERENCE_CHAIN: u64 = 10;
    pub const WARMUP_CHAIN: u64 = 11;
}

pub fn seeded(seed: u64) -> DekiRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for `(seed, purpose)`.
pub fn sub_rng(seed: u64, purpose: u64) -> DekiRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}
