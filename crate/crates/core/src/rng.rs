//! Seeded, splittable random streams.
//!
//! Every experiment draws from a [`Stream`] derived from a master seed and a
//! batch index. Batches are the unit of parallelism and of merging, so the
//! counts of a run never depend on how batches were scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream number 0 of the given seed.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for batch `index` under `seed`.
pub fn batch_stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Seed fallback from the `TENSORBALL_SEED` environment variable.
pub fn env_seed() -> Option<u64> {
    std::env::var("TENSORBALL_SEED").ok()?.trim().parse().ok()
}
