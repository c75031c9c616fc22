//! Reproducible random streams.
//!
//! Every path (and every Monte-Carlo repetition) owns a ChaCha stream keyed
//! by `(seed, index)`, so results do not depend on thread scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for item `index` of a family seeded by `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed for a child family (e.g. repetition `index` of an experiment).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // Offset keeps child seeds off the streams used for paths of `seed`.
    stream(seed ^ 0x9E37_79B9_7F4A_7C15, index).next_u64()
}
