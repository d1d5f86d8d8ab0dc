//! Seed fan-out.
//!
//! Every random decision in a run draws from its own ChaCha8 stream keyed
//! by `(master, user, round, purpose)`. The key words are folded through
//! SplitMix64 in that order:
//!
//! ```text
//! h = mix(master)
//! h = mix(h ^ purpose)
//! h = mix(h ^ user)
//! h = mix(h ^ round)
//! ```
//!
//! and the result seeds the stream. Streams that are not tied to a user or a
//! round use `user = NO_USER` / `round = 0`. Because the streams are
//! independent, adding or skipping an evaluation never shifts the random
//! numbers used for training or contention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Placeholder user index for streams owned by the server.
pub const NO_USER: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ModelInit = 1,
    Partition = 2,
    LocalTrain = 3,
    Backoff = 4,
    Selection = 5,
    Contention = 6,
    Replicate = 7,
    Dataset = 8,
}

/// SplitMix64 finalizer.
pub const fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, user: u64, round: u64, purpose: Purpose) -> u64 {
    let mut h = mix(master);
    h = mix(h ^ purpose as u64);
    h = mix(h ^ user);
    mix(h ^ round)
}

pub fn stream(master: u64, user: u64, round: u64, purpose: Purpose) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, user, round, purpose))
}

/// Seed of the `index`-th replicate of a master seed.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, NO_USER, index, Purpose::Replicate)
}
