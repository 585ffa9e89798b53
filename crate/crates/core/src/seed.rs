//! Deterministic substream derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a `u64`
//! obtained from `(master, purpose, index...)`. Two streams with different
//! purposes or indices are statistically independent, and nothing depends on
//! which thread consumes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes. The discriminant is mixed into the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Data = 2,
    Kernel = 3,
    Covariance = 4,
    Replica = 5,
    Gaussianity = 6,
    Martingale = 7,
    InitialCondition = 8,
    Chunk = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed, a purpose tag and an index.
pub fn derive(parent: u64, purpose: Purpose, index: u64) -> u64 {
    let a = splitmix64(parent ^ splitmix64(purpose as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn stream(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn substream(parent: u64, purpose: Purpose, index: u64) -> Rng {
    stream(derive(parent, purpose, index))
}
