//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream, keyed by
//! the run seed, a purpose tag and an index (epoch, fold, subnet, ...), so
//! that changing one consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    FeatureDropout = 4,
    Split = 5,
    Folds = 6,
    Features = 7,
    Responses = 8,
}

/// Independent stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}
