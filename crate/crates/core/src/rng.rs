//! Random number streams.
//!
//! Every sampler in the crate draws from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! a counter-based generator whose output is identical on every platform.
//! A user seed `s` is expanded with `ChaCha8Rng::seed_from_u64(s)`; independent
//! sub-streams of the same seed are selected with `set_stream(k)`, so the
//! streams of one seed never overlap.
//!
//! Experiments that need many independent runs derive per-run seeds with
//! [`derive_seed`], a SplitMix64 finalizer applied to `seed ^ golden * (index + 1)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type BmcRng = ChaCha8Rng;

/// Stream identifiers used by the samplers. Fixed so that output is stable
/// across releases.
pub mod streams {
    pub const MAIN: u64 = 0;
    pub const COIN: u64 = 1;
    pub const NUISANCE: u64 = 2;
    pub const KMEANS: u64 = 3;
}

pub fn stream_rng(seed: u64, stream: u64) -> BmcRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derives the seed of sub-run `index` from a parent seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ GOLDEN.wrapping_mul(index.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
