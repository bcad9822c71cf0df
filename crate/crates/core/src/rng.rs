//! Seeding.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! base seed and a stream label. Labels are mixed through SplitMix64 so that
//! data, initialization, shuffling and fold streams never share state even
//! when they start from the same user-facing seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels. Kept as constants so reports can name them.
pub mod stream {
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const TRAIN_DATA: u64 = 0x7472_6e64;
    pub const TEST_DATA: u64 = 0x7473_7464;
    pub const VALID_DATA: u64 = 0x766c_6464;
    pub const FOLD_PLAN: u64 = 0x666f_6c64;
    pub const FOLD_MODEL: u64 = 0x666d_646c;
    pub const SPLIT: u64 = 0x7370_6c74;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a stream label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ label.rotate_left(17))
}

/// A generator for the `(seed, label)` stream.
pub fn stream_rng(seed: u64, label: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, label))
}
