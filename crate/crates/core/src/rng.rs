//! Seeded random streams.
//!
//! A run is driven by one 64-bit seed. Each consumer (parameter
//! initialisation, dropout masks, shuffling, synthetic data) draws from its
//! own ChaCha stream so that adding draws to one consumer never perturbs
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    Shuffle,
    Synth,
    DevSplit,
    Embeddings,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Shuffle => 3,
            Stream::Synth => 4,
            Stream::DevSplit => 5,
            Stream::Embeddings => 6,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
