//! Seeded random streams.
//!
//! Every stochastic component owns a ChaCha8 stream derived from a master
//! seed and a stream id, so parallel work can be split without changing
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream ids used across the crate.
pub const STREAM_GEN_INIT: u64 = 1;
pub const STREAM_CRITIC_INIT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_SNAPSHOT: u64 = 4;
