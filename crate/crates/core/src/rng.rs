//! Deterministic random streams.
//!
//! All randomness in the crate comes from xoshiro256++ seeded through
//! `SeedableRng::seed_from_u64` (SplitMix64 expansion). Sub-streams such as
//! "shuffle order for epoch e" are derived by hashing the parent seed with a
//! stream tag, so no stream depends on how many draws another one made.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type DetRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}

/// Stream tags keep unrelated consumers of the same seed apart.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Blobs = 3,
    Noise = 4,
    Split = 5,
}

/// Seed for `(seed, stream, index)`, e.g. the shuffle of epoch `index`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed
        ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, stream: Stream, index: u64) -> DetRng {
    seeded(derive_seed(seed, stream, index))
}
