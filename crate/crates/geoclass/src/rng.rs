//! Seeded randomness, split into named streams.
//!
//! Every source of randomness in the pipeline (weight init, epoch shuffles,
//! dropout masks, synthetic data) draws from its own ChaCha stream derived
//! from one master seed, so components stay reproducible in isolation:
//! adding dropout draws does not shift the shuffle sequence, and so on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Randomness consumers. Each gets an independent stream of the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Network weight and radius-parameter initialization.
    Init = 1,
    /// Per-epoch shuffling of the training set.
    Shuffle = 2,
    /// Dropout masks.
    Dropout = 3,
    /// Synthetic data generation.
    Synth = 4,
}

/// RNG for one named stream of a master seed.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
