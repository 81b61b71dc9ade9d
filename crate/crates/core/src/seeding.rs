//! Counter-based seed derivation, so parallel work draws the same numbers
//! regardless of scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of tags into a child seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// Independent RNG stream for `(seed, tags...)`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream-tag constants, so different consumers of one seed never collide.
pub mod tag {
    pub const GENERATE: u64 = 1;
    pub const OUTLIERS: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const MI: u64 = 4;
    pub const CV: u64 = 5;
    pub const REPLICATE: u64 = 6;
}
