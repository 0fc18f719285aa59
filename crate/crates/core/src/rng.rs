//! Seeded generator streams.
//!
//! Every stochastic stage draws from ChaCha8 keyed by the run seed, with
//! its own stream number, so stages can be replayed independently of one
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Balance = 1,
    Split = 2,
    Init = 3,
    Batching = 4,
    Dropout = 5,
    Synthetic = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
