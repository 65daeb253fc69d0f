//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`SimRng`], a xoshiro256++
//! generator seeded through SplitMix64. Results are reproducible for a given
//! build; bit-exactness across languages or crate versions is not promised.
//!
//! Parallel loops never share a generator: each record or trial derives its
//! own seed from `(base, index)` with [`derive_seed`], so serial and parallel
//! runs draw identical streams.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SimRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-record seed derived from a base seed and a record index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
