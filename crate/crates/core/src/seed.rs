//! Seed hierarchy: every random stream is a deterministic child of the run
//! seed, so one seed reproduces environment resets, replay sampling,
//! exploration noise and weight initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `tag` under `parent`.
pub fn derive(parent: u64, tag: u64) -> u64 {
    splitmix64(parent ^ splitmix64(tag.wrapping_add(0x5EED)))
}

pub fn rng(parent: u64, tag: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, tag))
}

/// Named stream tags.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const EXPLORE: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const POLICY: u64 = 6;
}
