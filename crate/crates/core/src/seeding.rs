//! Independent random streams derived from one run seed.
//!
//! Each consumer gets its own ChaCha stream so that, for example, changing
//! the number of evaluation episodes never shifts the numbers drawn for
//! training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    NetworkInit = 1,
    EnvReset = 2,
    Exploration = 3,
    UpdateNoise = 4,
    Replay = 5,
    Evaluation = 6,
    Diagnostics = 7,
    OutputReset = 8,
    ValidationSample = 9,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer; used to derive per-episode and per-event seeds.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th event of `stream` in a run seeded with `seed`.
pub fn event_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(seed, stream as u64), index)
}
