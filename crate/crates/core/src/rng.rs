//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! 64-bit seed. Independent sub-streams are obtained by hashing the seed
//! together with a domain tag and an index (for example a record's `seq`),
//! so results do not depend on the order in which streams are consumed.
//! ChaCha is counter based and its output is specified bit-for-bit, which
//! makes every seeded result portable across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags keep streams for unrelated purposes apart.
pub mod domain {
    pub const TRAJECTORY: u64 = 1;
    pub const CHANNEL_NOISE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const DROPOUT: u64 = 7;
    pub const BOOTSTRAP: u64 = 8;
    pub const TREE: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a domain tag and an index into a derived seed.
pub fn derive(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain) ^ index)
}

/// Random stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, domain, index));
    rng.set_stream(domain);
    rng
}
